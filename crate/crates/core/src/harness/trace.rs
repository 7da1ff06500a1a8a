//! Raw per-run traces and per-arm aggregate curves on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{confidence_interval, smooth_curve};
use crate::active::{ActiveTrace, StrategyKind};
use crate::{Error, Result};

/// One line of a raw trace file. Wall-clock time is kept out of this file
/// so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTraceRow {
    pub iteration: usize,
    pub train_size: usize,
    pub test_rmse: Option<f64>,
    pub chain_warmup: usize,
    pub chain_samples: usize,
    pub accept_rate: f64,
    pub coverage_radius: Option<f64>,
    pub strategy_kind: StrategyKind,
    /// Set on the last row when the candidate pool ran out before the budget.
    pub exhausted: bool,
}

impl RawTraceRow {
    pub fn from_trace(trace: &ActiveTrace) -> Vec<Self> {
        trace
            .rows
            .iter()
            .map(|r| Self {
                iteration: r.iteration,
                train_size: r.train_size,
                test_rmse: r.test_rmse,
                chain_warmup: r.chain_warmup,
                chain_samples: r.chain_samples,
                accept_rate: r.accept_rate,
                coverage_radius: r.coverage_radius,
                strategy_kind: r.strategy_kind,
                exhausted: trace.exhausted_at == Some(r.iteration),
            })
            .collect()
    }
}

pub fn write_trace(path: impl AsRef<Path>, rows: &[RawTraceRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<RawTraceRow>> {
    read_rows(path.as_ref())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub train_size: usize,
    pub mean_test_rmse: f64,
    pub smoothed_test_rmse: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub repetitions: usize,
}

/// Combines repetitions of one arm.
///
/// Rows without a test RMSE are dropped and all repetitions are cut to
/// the shortest one. Each repetition is smoothed with a centered window;
/// the band is the Student-t interval across the smoothed curves.
pub fn aggregate_traces(
    reps: &[Vec<RawTraceRow>],
    window: usize,
    level: f64,
) -> Result<Vec<AggregateRow>> {
    if reps.is_empty() {
        return Err(Error::Integrity("no repetitions to aggregate".into()));
    }
    let curves: Vec<Vec<(usize, usize, f64)>> = reps
        .iter()
        .map(|rows| {
            rows.iter()
                .map_while(|r| r.test_rmse.map(|y| (r.iteration, r.train_size, y)))
                .collect()
        })
        .collect();
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let reference = &curves[0][..len];
    for c in &curves[1..] {
        if c[..len]
            .iter()
            .zip(reference)
            .any(|(a, b)| a.0 != b.0 || a.1 != b.1)
        {
            return Err(Error::Integrity(
                "repetitions disagree on iteration / train_size".into(),
            ));
        }
    }

    let smoothed: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| {
            let series: Vec<(f64, f64)> = c[..len].iter().map(|p| (p.1 as f64, p.2)).collect();
            smooth_curve(&series, window).map(|s| s.into_iter().map(|p| p.1).collect())
        })
        .collect::<Result<_>>()?;
    let raw: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| c[..len].iter().map(|p| p.2).collect())
        .collect();
    let raw_mean = confidence_interval(&raw, level)?;
    let bands = confidence_interval(&smoothed, level)?;

    Ok(reference
        .iter()
        .zip(raw_mean.iter().zip(&bands))
        .map(|(&(iteration, train_size, _), (m, b))| AggregateRow {
            iteration,
            train_size,
            mean_test_rmse: m.mean,
            smoothed_test_rmse: b.mean,
            ci_lower: b.lower,
            ci_upper: b.upper,
            repetitions: reps.len(),
        })
        .collect())
}

pub fn write_aggregate(path: impl AsRef<Path>, rows: &[AggregateRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_aggregate(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    read_rows(path.as_ref())
}
