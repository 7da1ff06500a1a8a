use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::model::{Cell, Observation};
use crate::{Error, Result};

/// RMSE between observed ratings and the predicted rating of their cell.
pub fn evaluate_rmse<'a, I>(predictions: &HashMap<Cell, f64>, test: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Observation>,
{
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for obs in test {
        let pred = predictions.get(&obs.cell()).ok_or_else(|| {
            Error::Integrity(format!(
                "no prediction for cell ({}, {}) of obs {}",
                obs.face_id, obs.trait_id, obs.obs_id
            ))
        })?;
        sum_sq += (obs.rating - pred).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Domain("RMSE over an empty test set".into()));
    }
    Ok((sum_sq / n as f64).sqrt())
}

/// Centered moving average of `y`, truncated at the ends. Even windows
/// reach one point further right than left.
pub fn smooth_curve(series: &[(f64, f64)], window: usize) -> Result<Vec<(f64, f64)>> {
    if window == 0 {
        return Err(Error::Config("smoothing window must be at least 1".into()));
    }
    let left = (window - 1) / 2;
    let right = window - 1 - left;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            let mean = series[lo..=hi].iter().map(|p| p.1).sum::<f64>() / (hi - lo + 1) as f64;
            (series[i].0, mean)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Student-t interval `mean +- t((1 + level) / 2, n - 1) * sd / sqrt(n)`
/// across repetitions at each x. A single repetition gives a zero-width
/// band.
pub fn confidence_interval(curves: &[Vec<f64>], level: f64) -> Result<Vec<Band>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let Some(first) = curves.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::Integrity(
            "repetition curves have different lengths".into(),
        ));
    }
    let n = curves.len();
    let t = if n > 1 {
        StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| Error::Config(e.to_string()))?
            .inverse_cdf(0.5 + level / 2.0)
    } else {
        0.0
    };
    Ok((0..len)
        .map(|i| {
            let mean = curves.iter().map(|c| c[i]).sum::<f64>() / n as f64;
            let half = if n > 1 {
                let var =
                    curves.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                t * (var / n as f64).sqrt()
            } else {
                0.0
            };
            Band {
                mean,
                lower: mean - half,
                upper: mean + half,
            }
        })
        .collect())
}
