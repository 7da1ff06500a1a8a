//! The bilinear model: ratings, feature banks, parameters, prediction and
//! the log-posterior with its gradient.
//!
//! Observed ratings live on (0, 100). They are mapped onto the latent scale
//! with a clamped logit and modelled as
//!
//! ```text
//! y_n = logit(rating_n / 100) ~ Normal((W_F f_j) . (W_T t_h), 1 / tau)
//! W_F ~ Normal(0, I / sigma),  W_T ~ Normal(0, I / theta)
//! sigma, theta ~ Gamma(a, b)   (shape a, rate b)
//! ```
//!
//! Predictions are `100 * sigmoid(r_star)` with `r_star` the noiseless
//! bilinear score.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A (face_id, trait_id) pair.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub obs_id: usize,
    /// Carried through from the source file, never read by the model.
    pub participant_id: String,
    pub face_id: usize,
    pub trait_id: usize,
    pub rating: f64,
}

impl Observation {
    pub fn cell(&self) -> Cell {
        (self.face_id, self.trait_id)
    }
}

/// Individually queryable rating observations.
///
/// `obs_id`s are unique and dense in `[0, N)`; observations are stored in
/// id order so that `observations()[i].obs_id == i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingsTable {
    observations: Vec<Observation>,
}

impl RatingsTable {
    pub fn new(mut observations: Vec<Observation>) -> Result<Self> {
        observations.sort_by_key(|o| o.obs_id);
        for (i, obs) in observations.iter().enumerate() {
            if obs.obs_id != i {
                return Err(if i > 0 && observations[i - 1].obs_id == obs.obs_id {
                    Error::Integrity(format!("duplicate obs_id {}", obs.obs_id))
                } else {
                    Error::Integrity(format!(
                        "obs_ids must be dense in [0, {}), missing {i}",
                        observations.len()
                    ))
                });
            }
            if !(obs.rating > 0.0 && obs.rating < 100.0) {
                return Err(Error::Domain(format!(
                    "obs {}: rating {} not strictly inside (0, 100)",
                    obs.obs_id, obs.rating
                )));
            }
        }
        Ok(Self { observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, obs_id: usize) -> Option<&Observation> {
        self.observations.get(obs_id)
    }

    pub fn observation(&self, obs_id: usize) -> Result<&Observation> {
        self.get(obs_id)
            .ok_or_else(|| Error::Index(format!("obs_id {obs_id} >= {}", self.len())))
    }

    /// Distinct cells in ascending order.
    pub fn cells(&self) -> Vec<Cell> {
        self.observations
            .iter()
            .map(Observation::cell)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Checks every face and trait id against the bank.
    pub fn check_bank(&self, bank: &FeatureBank) -> Result<()> {
        for obs in &self.observations {
            if obs.face_id >= bank.n_faces() || obs.trait_id >= bank.n_traits() {
                return Err(Error::Index(format!(
                    "obs {} refers to cell ({}, {}) outside a {}x{} feature bank",
                    obs.obs_id,
                    obs.face_id,
                    obs.trait_id,
                    bank.n_faces(),
                    bank.n_traits()
                )));
            }
        }
        Ok(())
    }
}

/// Dense side information: one feature row per face and per trait.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    face_features: Array2<f64>,
    trait_features: Array2<f64>,
}

impl FeatureBank {
    pub fn new(face_features: Array2<f64>, trait_features: Array2<f64>) -> Result<Self> {
        for (name, m) in [("face", &face_features), ("trait", &trait_features)] {
            if m.ncols() == 0 {
                return Err(Error::Shape(format!(
                    "{name} features need at least one column"
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "{name} features contain non-finite values"
                )));
            }
        }
        Ok(Self {
            face_features,
            trait_features,
        })
    }

    pub fn face_features(&self) -> &Array2<f64> {
        &self.face_features
    }

    pub fn trait_features(&self) -> &Array2<f64> {
        &self.trait_features
    }

    pub fn n_faces(&self) -> usize {
        self.face_features.nrows()
    }

    pub fn n_traits(&self) -> usize {
        self.trait_features.nrows()
    }

    pub fn face_dim(&self) -> usize {
        self.face_features.ncols()
    }

    pub fn trait_dim(&self) -> usize {
        self.trait_features.ncols()
    }

    pub fn face(&self, face_id: usize) -> Result<ArrayView1<'_, f64>> {
        if face_id >= self.n_faces() {
            return Err(Error::Index(format!(
                "face_id {face_id} >= {}",
                self.n_faces()
            )));
        }
        Ok(self.face_features.row(face_id))
    }

    pub fn trait_row(&self, trait_id: usize) -> Result<ArrayView1<'_, f64>> {
        if trait_id >= self.n_traits() {
            return Err(Error::Index(format!(
                "trait_id {trait_id} >= {}",
                self.n_traits()
            )));
        }
        Ok(self.trait_features.row(trait_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub latent_dim: usize,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub noise_precision: f64,
    pub logit_clamp: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            gamma_shape: 2.0,
            gamma_rate: 2.0,
            noise_precision: 1.0,
            logit_clamp: 1e-3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if !positive(self.gamma_shape) || !positive(self.gamma_rate) {
            return Err(Error::Config(
                "gamma shape and rate must be positive".into(),
            ));
        }
        if !positive(self.noise_precision) {
            return Err(Error::Config("noise_precision must be positive".into()));
        }
        if !(self.logit_clamp > 0.0 && self.logit_clamp < 0.5) {
            return Err(Error::Config("logit_clamp must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// One parameter draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// K x D_f projection of face features.
    pub face_weights: Array2<f64>,
    /// K x D_t projection of trait features.
    pub trait_weights: Array2<f64>,
    /// Precision of the face weights.
    pub sigma: f64,
    /// Precision of the trait weights.
    pub theta: f64,
}

impl ModelState {
    pub fn zeros(latent_dim: usize, face_dim: usize, trait_dim: usize) -> Self {
        Self {
            face_weights: Array2::zeros((latent_dim, face_dim)),
            trait_weights: Array2::zeros((latent_dim, trait_dim)),
            sigma: 1.0,
            theta: 1.0,
        }
    }

    /// Draws precisions from their Gamma priors, then weights given them.
    pub fn sample_prior<R: Rng + ?Sized>(
        hyper: &Hyperparams,
        face_dim: usize,
        trait_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        let gamma = Gamma::new(hyper.gamma_shape, 1.0 / hyper.gamma_rate)
            .map_err(|e| Error::Config(e.to_string()))?;
        let sigma: f64 = gamma.sample(rng);
        let theta: f64 = gamma.sample(rng);
        let k = hyper.latent_dim;
        let mut draw = |rows: usize, cols: usize, precision: f64| {
            let sd = precision.sqrt().recip();
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(rng);
                z * sd
            })
        };
        let face_weights = draw(k, face_dim, sigma);
        let trait_weights = draw(k, trait_dim, theta);
        Ok(Self {
            face_weights,
            trait_weights,
            sigma,
            theta,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.face_weights.nrows()
    }

    fn check_against(&self, bank: &FeatureBank) -> Result<()> {
        if self.trait_weights.nrows() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "face weights have {} latent rows, trait weights {}",
                self.latent_dim(),
                self.trait_weights.nrows()
            )));
        }
        if self.face_weights.ncols() != bank.face_dim()
            || self.trait_weights.ncols() != bank.trait_dim()
        {
            return Err(Error::Shape(format!(
                "weights are {}x{} / {}x{}, features have {} / {} columns",
                self.face_weights.nrows(),
                self.face_weights.ncols(),
                self.trait_weights.nrows(),
                self.trait_weights.ncols(),
                bank.face_dim(),
                bank.trait_dim()
            )));
        }
        Ok(())
    }

    fn check_precisions(&self) -> Result<()> {
        if !(self.sigma > 0.0
            && self.sigma.is_finite()
            && self.theta > 0.0
            && self.theta.is_finite())
        {
            return Err(Error::Domain(format!(
                "precisions must be positive and finite (sigma={}, theta={})",
                self.sigma, self.theta
            )));
        }
        Ok(())
    }
}

/// Projects a feature row into the latent space: `weights . row`.
pub fn latent_embed(feature_row: ArrayView1<f64>, weights: ArrayView2<f64>) -> Result<Array1<f64>> {
    if feature_row.len() != weights.ncols() {
        return Err(Error::Shape(format!(
            "feature row of length {} against {}x{} weights",
            feature_row.len(),
            weights.nrows(),
            weights.ncols()
        )));
    }
    Ok(weights.dot(&feature_row))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellPrediction {
    pub r_star: f64,
    pub r_hat: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Noiseless prediction for one cell.
pub fn predict_cell(
    state: &ModelState,
    bank: &FeatureBank,
    face_id: usize,
    trait_id: usize,
) -> Result<CellPrediction> {
    let face = latent_embed(bank.face(face_id)?, state.face_weights.view())?;
    let tr = latent_embed(bank.trait_row(trait_id)?, state.trait_weights.view())?;
    if face.len() != tr.len() {
        return Err(Error::Shape(
            "latent dimensions of the two sides differ".into(),
        ));
    }
    let r_star = face.dot(&tr);
    Ok(CellPrediction {
        r_star,
        r_hat: inverse_logit(r_star),
    })
}

/// `logit(clamp(rating / 100, delta, 1 - delta))`.
pub fn logit_transform(rating: f64, delta: f64) -> Result<f64> {
    if !(rating > 0.0 && rating < 100.0) {
        return Err(Error::Domain(format!("rating {rating} outside (0, 100)")));
    }
    let p = (rating / 100.0).clamp(delta, 1.0 - delta);
    Ok((p / (1.0 - p)).ln())
}

/// `100 * sigmoid(y)`.
pub fn inverse_logit(y: f64) -> f64 {
    100.0 * sigmoid(y)
}

#[derive(Debug, Clone, Copy)]
struct CellTotals {
    face: usize,
    trait_: usize,
    count: f64,
    sum: f64,
    sum_sq: f64,
}

/// Observations reduced to per-cell sufficient statistics on the logit
/// scale, together with the feature rows of the faces and traits involved.
///
/// The Gaussian likelihood only depends on each cell's count, sum and sum
/// of squares, so repeated evaluations cost O(cells) rather than O(N).
#[derive(Debug, Clone)]
pub struct TrainingData {
    face_ids: Vec<usize>,
    trait_ids: Vec<usize>,
    face_rows: Array2<f64>,
    trait_rows: Array2<f64>,
    cells: Vec<CellTotals>,
    n_obs: usize,
    face_dim: usize,
    trait_dim: usize,
}

impl TrainingData {
    pub fn new<'a, I>(observations: I, bank: &FeatureBank, logit_clamp: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let mut face_slot: HashMap<usize, usize> = HashMap::new();
        let mut trait_slot: HashMap<usize, usize> = HashMap::new();
        let mut face_ids = Vec::new();
        let mut trait_ids = Vec::new();
        let mut cell_slot: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cells: Vec<CellTotals> = Vec::new();
        let mut n_obs = 0;
        for obs in observations {
            bank.face(obs.face_id)?;
            bank.trait_row(obs.trait_id)?;
            let y = logit_transform(obs.rating, logit_clamp)?;
            let f = *face_slot.entry(obs.face_id).or_insert_with(|| {
                face_ids.push(obs.face_id);
                face_ids.len() - 1
            });
            let t = *trait_slot.entry(obs.trait_id).or_insert_with(|| {
                trait_ids.push(obs.trait_id);
                trait_ids.len() - 1
            });
            let c = *cell_slot.entry((f, t)).or_insert_with(|| {
                cells.push(CellTotals {
                    face: f,
                    trait_: t,
                    count: 0.0,
                    sum: 0.0,
                    sum_sq: 0.0,
                });
                cells.len() - 1
            });
            let cell = &mut cells[c];
            cell.count += 1.0;
            cell.sum += y;
            cell.sum_sq += y * y;
            n_obs += 1;
        }
        let face_rows = bank.face_features().select(Axis(0), &face_ids);
        let trait_rows = bank.trait_features().select(Axis(0), &trait_ids);
        Ok(Self {
            face_ids,
            trait_ids,
            face_rows,
            trait_rows,
            cells,
            n_obs,
            face_dim: bank.face_dim(),
            trait_dim: bank.trait_dim(),
        })
    }

    pub fn from_table(table: &RatingsTable, bank: &FeatureBank, logit_clamp: f64) -> Result<Self> {
        Self::new(table.observations(), bank, logit_clamp)
    }

    pub fn n_observations(&self) -> usize {
        self.n_obs
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn face_dim(&self) -> usize {
        self.face_dim
    }

    pub fn trait_dim(&self) -> usize {
        self.trait_dim
    }

    /// Face ids appearing in the data, in first-seen order.
    pub fn face_ids(&self) -> &[usize] {
        &self.face_ids
    }

    pub fn trait_ids(&self) -> &[usize] {
        &self.trait_ids
    }

    fn check_state(&self, state: &ModelState) -> Result<()> {
        state.check_precisions()?;
        if state.face_weights.ncols() != self.face_dim
            || state.trait_weights.ncols() != self.trait_dim
            || state.trait_weights.nrows() != state.face_weights.nrows()
        {
            return Err(Error::Shape(format!(
                "weights {:?} / {:?} do not match feature dims {} / {}",
                state.face_weights.dim(),
                state.trait_weights.dim(),
                self.face_dim,
                self.trait_dim
            )));
        }
        Ok(())
    }

    /// Log-posterior up to an additive constant.
    pub fn log_posterior(&self, state: &ModelState, hyper: &Hyperparams) -> Result<f64> {
        self.check_state(state)?;
        Ok(self.evaluate(state, hyper, None))
    }

    /// The sampler's target: log-posterior over (W_F, W_T, log sigma,
    /// log theta), i.e. [`Self::log_posterior`] plus the log-Jacobian
    /// `log sigma + log theta`.
    pub fn log_density(&self, state: &ModelState, hyper: &Hyperparams) -> Result<f64> {
        Ok(self.log_posterior(state, hyper)? + state.sigma.ln() + state.theta.ln())
    }

    /// [`Self::log_density`] and its gradient.
    pub fn log_density_and_grad(
        &self,
        state: &ModelState,
        hyper: &Hyperparams,
    ) -> Result<(f64, Gradient)> {
        self.check_state(state)?;
        let mut grad = Gradient::zeros_like(state);
        let lp = self.evaluate(state, hyper, Some(&mut grad));
        Ok((lp + state.sigma.ln() + state.theta.ln(), grad))
    }

    fn evaluate(
        &self,
        state: &ModelState,
        hyper: &Hyperparams,
        grad: Option<&mut Gradient>,
    ) -> f64 {
        let tau = hyper.noise_precision;
        // latent embeddings, one column per face / trait present
        let face_latent = state.face_weights.dot(&self.face_rows.t());
        let trait_latent = state.trait_weights.dot(&self.trait_rows.t());

        let mut sse = 0.0;
        let mut face_adj = grad
            .is_some()
            .then(|| Array2::<f64>::zeros(face_latent.raw_dim()));
        let mut trait_adj = grad
            .is_some()
            .then(|| Array2::<f64>::zeros(trait_latent.raw_dim()));
        for c in &self.cells {
            let u = face_latent.column(c.face);
            let v = trait_latent.column(c.trait_);
            let r = u.dot(&v);
            sse += c.sum_sq - 2.0 * r * c.sum + c.count * r * r;
            if let (Some(fa), Some(ta)) = (face_adj.as_mut(), trait_adj.as_mut()) {
                let e = tau * (c.sum - c.count * r);
                fa.column_mut(c.face).scaled_add(e, &v);
                ta.column_mut(c.trait_).scaled_add(e, &u);
            }
        }
        let log_lik = -0.5 * tau * sse;

        let k = state.latent_dim() as f64;
        let (sigma, theta) = (state.sigma, state.theta);
        let face_sq = state.face_weights.iter().map(|w| w * w).sum::<f64>();
        let trait_sq = state.trait_weights.iter().map(|w| w * w).sum::<f64>();
        let face_norm_terms = 0.5 * k * self.face_dim as f64;
        let trait_norm_terms = 0.5 * k * self.trait_dim as f64;
        let log_prior_weights = face_norm_terms * sigma.ln() - 0.5 * sigma * face_sq
            + trait_norm_terms * theta.ln()
            - 0.5 * theta * trait_sq;
        let (a, b) = (hyper.gamma_shape, hyper.gamma_rate);
        let log_prior_precisions =
            (a - 1.0) * sigma.ln() - b * sigma + (a - 1.0) * theta.ln() - b * theta;

        if let (Some(g), Some(fa), Some(ta)) = (grad, face_adj, trait_adj) {
            g.face_weights = fa.dot(&self.face_rows);
            g.face_weights.scaled_add(-sigma, &state.face_weights);
            g.trait_weights = ta.dot(&self.trait_rows);
            g.trait_weights.scaled_add(-theta, &state.trait_weights);
            // d/d(log s) of the s-dependent terms, plus 1 from the Jacobian
            g.log_sigma = face_norm_terms - 0.5 * sigma * face_sq + a - b * sigma;
            g.log_theta = trait_norm_terms - 0.5 * theta * trait_sq + a - b * theta;
        }
        log_lik + log_prior_weights + log_prior_precisions
    }
}

/// Gradient over (W_F, W_T, log sigma, log theta).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub face_weights: Array2<f64>,
    pub trait_weights: Array2<f64>,
    pub log_sigma: f64,
    pub log_theta: f64,
}

impl Gradient {
    fn zeros_like(state: &ModelState) -> Self {
        Self {
            face_weights: Array2::zeros(state.face_weights.raw_dim()),
            trait_weights: Array2::zeros(state.trait_weights.raw_dim()),
            log_sigma: 0.0,
            log_theta: 0.0,
        }
    }
}

/// Log-posterior of `state` given every observation in `table`, dropping
/// additive terms that do not depend on the state.
///
/// Gaussian log-likelihood of the logit ratings with precision `tau`,
/// isotropic Gaussian log-priors on both weight matrices (with their
/// `K*D/2 * log(precision)` normalizers) and Gamma(a, b) log-priors on
/// `sigma` and `theta`.
pub fn log_posterior(
    state: &ModelState,
    table: &RatingsTable,
    bank: &FeatureBank,
    hyper: &Hyperparams,
) -> Result<f64> {
    state.check_precisions()?;
    state.check_against(bank)?;
    TrainingData::from_table(table, bank, hyper.logit_clamp)?.log_posterior(state, hyper)
}

/// [`log_posterior`] expressed over log-precisions: adds `log sigma + log theta`.
pub fn log_posterior_unconstrained(
    state: &ModelState,
    table: &RatingsTable,
    bank: &FeatureBank,
    hyper: &Hyperparams,
) -> Result<f64> {
    state.check_precisions()?;
    state.check_against(bank)?;
    TrainingData::from_table(table, bank, hyper.logit_clamp)?.log_density(state, hyper)
}

/// Analytic gradient of [`log_posterior_unconstrained`]. The weight blocks
/// equal the gradient of [`log_posterior`]; the precision components are
/// taken with respect to `log sigma` and `log theta` and include the
/// Jacobian term.
pub fn grad_log_posterior(
    state: &ModelState,
    table: &RatingsTable,
    bank: &FeatureBank,
    hyper: &Hyperparams,
) -> Result<Gradient> {
    state.check_precisions()?;
    state.check_against(bank)?;
    let data = TrainingData::from_table(table, bank, hyper.logit_clamp)?;
    Ok(data.log_density_and_grad(state, hyper)?.1)
}
