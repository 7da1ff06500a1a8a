//! MCMC over [`ModelState`]s, trailing-window prediction aggregation and
//! the chain-length schedules used in the chain-length experiments.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::hmc::{Leapfrog, LogDensity, Point};
use crate::model::{
    inverse_logit, Cell, FeatureBank, Hyperparams, ModelState, RatingsTable, TrainingData,
};
use crate::rng::rng_from;
use crate::{Error, Result};

const STEP_GROW: f64 = 1.02;
const STEP_SHRINK: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub warmup: usize,
    pub samples: usize,
    pub leapfrog_steps: usize,
    pub initial_step_size: f64,
    pub target_accept: f64,
    pub aggregation_window: usize,
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            warmup: 30,
            samples: 50,
            leapfrog_steps: 20,
            initial_step_size: 0.01,
            target_accept: 0.75,
            aggregation_window: 10,
            warm_start: true,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config(
                "chain needs at least one posterior sample".into(),
            ));
        }
        if self.aggregation_window == 0 {
            return Err(Error::Config("aggregation_window must be positive".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("leapfrog_steps must be positive".into()));
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return Err(Error::Config("initial_step_size must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Which parameter blocks the chain moves. Frozen blocks stay at their
/// value in the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeBlocks {
    pub face_weights: bool,
    pub trait_weights: bool,
    pub precisions: bool,
}

impl FreeBlocks {
    pub const ALL: Self = Self {
        face_weights: true,
        trait_weights: true,
        precisions: true,
    };
}

impl Default for FreeBlocks {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorBundle {
    /// Post-warmup draws in chain order.
    pub draws: Vec<ModelState>,
    pub accept_rate: f64,
    pub final_step_size: f64,
    pub final_state: ModelState,
}

struct PosteriorTarget<'a> {
    data: &'a TrainingData,
    hyper: &'a Hyperparams,
    base: ModelState,
    free: FreeBlocks,
}

impl PosteriorTarget<'_> {
    fn pack(&self, state: &ModelState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        if self.free.face_weights {
            x.extend(state.face_weights.iter());
        }
        if self.free.trait_weights {
            x.extend(state.trait_weights.iter());
        }
        if self.free.precisions {
            x.push(state.sigma.ln());
            x.push(state.theta.ln());
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> ModelState {
        let mut state = self.base.clone();
        let mut offset = 0;
        if self.free.face_weights {
            let n = state.face_weights.len();
            state
                .face_weights
                .iter_mut()
                .zip(&x[offset..offset + n])
                .for_each(|(w, v)| *w = *v);
            offset += n;
        }
        if self.free.trait_weights {
            let n = state.trait_weights.len();
            state
                .trait_weights
                .iter_mut()
                .zip(&x[offset..offset + n])
                .for_each(|(w, v)| *w = *v);
            offset += n;
        }
        if self.free.precisions {
            state.sigma = x[offset].exp();
            state.theta = x[offset + 1].exp();
        }
        state
    }
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        let mut d = 0;
        if self.free.face_weights {
            d += self.base.face_weights.len();
        }
        if self.free.trait_weights {
            d += self.base.trait_weights.len();
        }
        if self.free.precisions {
            d += 2;
        }
        d
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        let state = self.unpack(position);
        let Ok((lp, g)) = self.data.log_density_and_grad(&state, self.hyper) else {
            return f64::NEG_INFINITY;
        };
        let mut offset = 0;
        if self.free.face_weights {
            let n = g.face_weights.len();
            grad[offset..offset + n]
                .iter_mut()
                .zip(g.face_weights.iter())
                .for_each(|(o, v)| *o = *v);
            offset += n;
        }
        if self.free.trait_weights {
            let n = g.trait_weights.len();
            grad[offset..offset + n]
                .iter_mut()
                .zip(g.trait_weights.iter())
                .for_each(|(o, v)| *o = *v);
            offset += n;
        }
        if self.free.precisions {
            grad[offset] = g.log_sigma;
            grad[offset + 1] = g.log_theta;
        }
        lp
    }
}

/// Runs a chain over every observation in `table`.
pub fn run_chain(
    init: &ModelState,
    table: &RatingsTable,
    bank: &FeatureBank,
    hyper: &Hyperparams,
    config: &ChainConfig,
) -> Result<PosteriorBundle> {
    let data = TrainingData::from_table(table, bank, hyper.logit_clamp)?;
    run_chain_on(init, &data, hyper, config, FreeBlocks::ALL)
}

/// Runs `config.warmup` adapting iterations and `config.samples` recorded
/// iterations from `init`.
///
/// During warmup the step size is multiplied by 1.02 after each proposal
/// whose acceptance probability exceeds `target_accept`, and by 0.98
/// otherwise; it is frozen for the recorded iterations.
pub fn run_chain_on(
    init: &ModelState,
    data: &TrainingData,
    hyper: &Hyperparams,
    config: &ChainConfig,
    free: FreeBlocks,
) -> Result<PosteriorBundle> {
    config.validate()?;
    hyper.validate()?;
    if data.n_observations() == 0 {
        return Err(Error::Config(
            "cannot run a chain on an empty training set".into(),
        ));
    }
    let target = PosteriorTarget {
        data,
        hyper,
        base: init.clone(),
        free,
    };
    let log_density = data.log_density(init, hyper)?;
    if !log_density.is_finite() {
        return Err(Error::Init(format!(
            "log density at the initial state is {log_density}"
        )));
    }
    let mut point = Point::new(&target, target.pack(init));
    if !point.log_density.is_finite() || point.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Init(
            "non-finite gradient at the initial state".into(),
        ));
    }

    let mut rng = rng_from(config.seed);
    let mut leapfrog = Leapfrog {
        step_size: config.initial_step_size,
        steps: config.leapfrog_steps,
    };
    for _ in 0..config.warmup {
        let t = leapfrog.transition(&target, &mut point, &mut rng);
        leapfrog.step_size *= if t.accept_prob > config.target_accept {
            STEP_GROW
        } else {
            STEP_SHRINK
        };
    }

    let mut draws = Vec::with_capacity(config.samples);
    let mut accepted = 0usize;
    for _ in 0..config.samples {
        if leapfrog.transition(&target, &mut point, &mut rng).accepted {
            accepted += 1;
        }
        draws.push(target.unpack(&point.position));
    }
    let final_state = draws.last().cloned().expect("samples >= 1");
    Ok(PosteriorBundle {
        draws,
        accept_rate: accepted as f64 / config.samples as f64,
        final_step_size: leapfrog.step_size,
        final_state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellEstimate {
    pub mean_r_hat: f64,
    /// Sample standard deviation of `r_star` across the window (n - 1
    /// divisor, zero for a single draw). Used as the uncertainty score.
    pub std_r_star: f64,
}

/// Summarizes predictions over the last `min(window, S)` draws.
pub fn aggregate_predictions(
    bundle: &PosteriorBundle,
    bank: &FeatureBank,
    cells: &[Cell],
    window: usize,
) -> Result<Vec<CellEstimate>> {
    if bundle.draws.is_empty() {
        return Err(Error::Domain("posterior bundle has no draws".into()));
    }
    if window == 0 {
        return Err(Error::Config("aggregation window must be positive".into()));
    }
    if cells.is_empty() {
        return Ok(Vec::new());
    }

    let mut face_slot = HashMap::new();
    let mut trait_slot = HashMap::new();
    let mut face_ids = Vec::new();
    let mut trait_ids = Vec::new();
    let mut slots = Vec::with_capacity(cells.len());
    for &(f, t) in cells {
        bank.face(f)?;
        bank.trait_row(t)?;
        let fs = *face_slot.entry(f).or_insert_with(|| {
            face_ids.push(f);
            face_ids.len() - 1
        });
        let ts = *trait_slot.entry(t).or_insert_with(|| {
            trait_ids.push(t);
            trait_ids.len() - 1
        });
        slots.push((fs, ts));
    }
    let face_rows = bank.face_features().select(Axis(0), &face_ids);
    let trait_rows = bank.trait_features().select(Axis(0), &trait_ids);

    let n = window.min(bundle.draws.len());
    let tail = &bundle.draws[bundle.draws.len() - n..];
    let mut r_star = Array2::<f64>::zeros((cells.len(), n));
    for (d, state) in tail.iter().enumerate() {
        if state.face_weights.ncols() != bank.face_dim()
            || state.trait_weights.ncols() != bank.trait_dim()
        {
            return Err(Error::Shape("draw does not match the feature bank".into()));
        }
        let face_latent = state.face_weights.dot(&face_rows.t());
        let trait_latent = state.trait_weights.dot(&trait_rows.t());
        for (c, &(fs, ts)) in slots.iter().enumerate() {
            r_star[[c, d]] = face_latent.column(fs).dot(&trait_latent.column(ts));
        }
    }

    Ok(r_star
        .rows()
        .into_iter()
        .map(|row| {
            let mean_r_hat = row.iter().map(|&r| inverse_logit(r)).sum::<f64>() / n as f64;
            let std_r_star = if n > 1 {
                let mean = row.sum() / n as f64;
                (row.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            CellEstimate {
                mean_r_hat,
                std_r_star,
            }
        })
        .collect())
}

/// Warmup/sample counts for schedule `option` at step `k`:
///
/// 1. warmup and samples grow together in a 3:5 ratio, `(3k, 5k)`;
/// 2. samples only, `(0, 5k)`;
/// 3. warmup only with five samples, `(5k, 5)`.
pub fn chain_schedule(option: u8, k: usize) -> Result<(usize, usize)> {
    if k == 0 {
        return Err(Error::Config("schedule step k must be at least 1".into()));
    }
    match option {
        1 => Ok((3 * k, 5 * k)),
        2 => Ok((0, 5 * k)),
        3 => Ok((5 * k, 5)),
        other => Err(Error::Config(format!(
            "unknown chain schedule option {other}"
        ))),
    }
}

/// A schedule option fixed at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSchedule {
    pub option: u8,
    pub k: usize,
}

impl ChainSchedule {
    pub fn counts(&self) -> Result<(usize, usize)> {
        chain_schedule(self.option, self.k)
    }

    /// Smallest step reaching `total` chain iterations, if it is reachable exactly.
    pub fn for_total_length(option: u8, total: usize) -> Result<Self> {
        let per_step = match option {
            1 => 8,
            2 | 3 => 5,
            other => {
                return Err(Error::Config(format!(
                    "unknown chain schedule option {other}"
                )))
            }
        };
        // option 3 has five fixed samples on top of 5k warmup
        let offset = if option == 3 { 5 } else { 0 };
        if total <= offset || !(total - offset).is_multiple_of(per_step) {
            return Err(Error::Config(format!(
                "option {option} cannot produce a chain of length {total}"
            )));
        }
        Ok(Self {
            option,
            k: (total - offset) / per_step,
        })
    }
}
