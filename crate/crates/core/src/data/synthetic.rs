//! Synthetic rating data with known ground truth.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{inverse_logit, FeatureBank, Observation, RatingsTable};
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_faces: usize,
    pub n_traits: usize,
    pub feat_dim_face: usize,
    pub feat_dim_trait: usize,
    pub true_latent_dim: usize,
    pub ratings_per_cell: usize,
    /// Precision of the logit-scale noise added to each rating.
    pub noise_precision: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_faces: 50,
            n_traits: 10,
            feat_dim_face: 8,
            feat_dim_trait: 4,
            true_latent_dim: 4,
            ratings_per_cell: 4,
            noise_precision: 4.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_faces,
            self.n_traits,
            self.feat_dim_face,
            self.feat_dim_trait,
            self.true_latent_dim,
            self.ratings_per_cell,
        ];
        if counts.contains(&0) {
            return Err(Error::Config(
                "synthetic counts must all be at least 1".into(),
            ));
        }
        if !(self.noise_precision > 0.0 && self.noise_precision.is_finite()) {
            return Err(Error::Config("noise_precision must be positive".into()));
        }
        Ok(())
    }

    pub fn n_observations(&self) -> usize {
        self.n_faces * self.n_traits * self.ratings_per_cell
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub table: RatingsTable,
    pub bank: FeatureBank,
    pub true_face_weights: Array2<f64>,
    pub true_trait_weights: Array2<f64>,
}

impl SyntheticDataset {
    /// Noiseless latent score of a cell under the true weights.
    pub fn true_r_star(&self, face_id: usize, trait_id: usize) -> f64 {
        let u = self
            .true_face_weights
            .dot(&self.bank.face_features().row(face_id));
        let v = self
            .true_trait_weights
            .dot(&self.bank.trait_features().row(trait_id));
        u.dot(&v)
    }
}

fn normal_matrix<R: Rng>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

/// Generates features, weights and ratings.
///
/// Features are i.i.d. standard normal. True weight entries are drawn
/// with variance `1 / (D * sqrt(K))` for a side of feature dimension `D`,
/// which gives every cell's latent score unit variance. Each observation
/// is `inverse_logit(r_star + noise)` with noise precision
/// `noise_precision`. Observations are numbered face-major, then trait,
/// then rater; `participant_id` is the rater's index within its cell.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);
    let k = cfg.true_latent_dim as f64;
    let faces = normal_matrix(cfg.n_faces, cfg.feat_dim_face, 1.0, &mut rng);
    let traits = normal_matrix(cfg.n_traits, cfg.feat_dim_trait, 1.0, &mut rng);
    let face_sd = (cfg.feat_dim_face as f64 * k.sqrt()).sqrt().recip();
    let trait_sd = (cfg.feat_dim_trait as f64 * k.sqrt()).sqrt().recip();
    let true_face_weights =
        normal_matrix(cfg.true_latent_dim, cfg.feat_dim_face, face_sd, &mut rng);
    let true_trait_weights =
        normal_matrix(cfg.true_latent_dim, cfg.feat_dim_trait, trait_sd, &mut rng);

    let face_latent = true_face_weights.dot(&faces.t());
    let trait_latent = true_trait_weights.dot(&traits.t());
    let noise = Normal::new(0.0, cfg.noise_precision.sqrt().recip())
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut observations = Vec::with_capacity(cfg.n_observations());
    for f in 0..cfg.n_faces {
        for t in 0..cfg.n_traits {
            let r_star = face_latent.column(f).dot(&trait_latent.column(t));
            for rater in 0..cfg.ratings_per_cell {
                let rating = inverse_logit(r_star + noise.sample(&mut rng));
                // keep far tails inside the open interval
                let rating = rating.clamp(1e-10, 100.0 - 1e-10);
                observations.push(Observation {
                    obs_id: observations.len(),
                    participant_id: rater.to_string(),
                    face_id: f,
                    trait_id: t,
                    rating,
                });
            }
        }
    }
    Ok(SyntheticDataset {
        table: RatingsTable::new(observations)?,
        bank: FeatureBank::new(faces, traits)?,
        true_face_weights,
        true_trait_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_faces: 6,
            n_traits: 3,
            ratings_per_cell: 5,
            seed: 12,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn ratings_are_open_interval_and_shaped() {
        let ds = generate_synthetic(&small()).unwrap();
        assert_eq!(ds.table.len(), 90);
        assert!(ds
            .table
            .observations()
            .iter()
            .all(|o| o.rating > 0.0 && o.rating < 100.0));
        ds.table.check_bank(&ds.bank).unwrap();
        assert_eq!(ds.bank.face_features().dim(), (6, 8));
        assert_eq!(ds.true_trait_weights.dim(), (4, 4));
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.bank, b.bank);
        let c = generate_synthetic(&SyntheticConfig {
            seed: 13,
            ..small()
        })
        .unwrap();
        assert_ne!(a.table, c.table);
    }

    #[test]
    fn latent_scores_have_roughly_unit_variance() {
        let ds = generate_synthetic(&SyntheticConfig {
            n_faces: 200,
            n_traits: 50,
            ratings_per_cell: 1,
            seed: 5,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let scores: Vec<f64> = (0..200)
            .flat_map(|f| (0..50).map(move |t| (f, t)))
            .map(|(f, t)| ds.true_r_star(f, t))
            .collect();
        let var = scores.iter().map(|s| s * s).sum::<f64>() / scores.len() as f64;
        // one weight draw per run: loose band around 1
        assert!(var > 0.2 && var < 5.0, "variance {var}");
    }

    #[test]
    fn rejects_zero_counts() {
        let bad = SyntheticConfig {
            n_traits: 0,
            ..small()
        };
        assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
    }
}
