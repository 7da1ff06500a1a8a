//! Linear feature-dimension reduction.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceMethod {
    Pca,
    RandomProjection,
}

impl std::str::FromStr for ReduceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Self::Pca),
            "random_projection" | "random-projection" => Ok(Self::RandomProjection),
            other => Err(Error::Config(format!("unknown reduction method {other:?}"))),
        }
    }
}

/// Principal components of a column-centered matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// D x target_dim, columns ordered by decreasing variance. Each column
    /// is signed so that its largest-magnitude loading is positive.
    pub components: Array2<f64>,
    pub variances: Array1<f64>,
}

impl Pca {
    pub fn fit(matrix: &Array2<f64>, target_dim: usize) -> Result<Self> {
        let (n, d) = matrix.dim();
        check_target(d, target_dim)?;
        if n == 0 {
            return Err(Error::Shape("cannot fit PCA on an empty matrix".into()));
        }
        let mean = matrix.mean_axis(Axis(0)).expect("n > 0");
        let centered = matrix - &mean;
        let cov = centered.t().dot(&centered) / (n.max(2) - 1) as f64;
        let cov = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
        let eigen = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eigen.eigenvalues[b]
                .total_cmp(&eigen.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let mut components = Array2::zeros((d, target_dim));
        let mut variances = Array1::zeros(target_dim);
        for (out, &src) in order.iter().take(target_dim).enumerate() {
            let col = eigen.eigenvectors.column(src);
            let pivot = (0..d)
                .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
                .expect("d >= 1");
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..d {
                components[[i, out]] = sign * col[i];
            }
            variances[out] = eigen.eigenvalues[src].max(0.0);
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn transform(&self, matrix: &Array2<f64>) -> Array2<f64> {
        (matrix - &self.mean).dot(&self.components)
    }

    pub fn reconstruct(&self, scores: &Array2<f64>) -> Array2<f64> {
        scores.dot(&self.components.t()) + &self.mean
    }
}

fn check_target(d: usize, target_dim: usize) -> Result<()> {
    if target_dim == 0 || target_dim > d {
        return Err(Error::Config(format!(
            "target dimension {target_dim} must lie in [1, {d}]"
        )));
    }
    Ok(())
}

/// Reduces `matrix` (N x D) to N x `target_dim`.
///
/// `Pca` projects the centered rows onto the leading principal axes;
/// `RandomProjection` multiplies by a seeded Gaussian D x target_dim
/// matrix scaled by `1 / sqrt(target_dim)`.
pub fn reduce_features(
    matrix: &Array2<f64>,
    target_dim: usize,
    method: ReduceMethod,
    seed: u64,
) -> Result<Array2<f64>> {
    check_target(matrix.ncols(), target_dim)?;
    match method {
        ReduceMethod::Pca => Ok(Pca::fit(matrix, target_dim)?.transform(matrix)),
        ReduceMethod::RandomProjection => {
            let mut rng = rng_from(seed);
            let scale = (target_dim as f64).sqrt().recip();
            let projection = Array2::from_shape_fn((matrix.ncols(), target_dim), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            });
            Ok(matrix.dot(&projection))
        }
    }
}
