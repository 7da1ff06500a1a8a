//! Batched active learning over the rating pool.
//!
//! The queryable unit is a single observation. Each iteration fits a chain
//! on the known pool, scores every cell, measures test RMSE on the
//! observations not yet queried, then moves one batch of candidates into
//! the known pool.

mod driver;
mod kcenter;
mod select;

use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::model::RatingsTable;
use crate::rng::rng_from;
use crate::{Error, Result};

pub use driver::{run_active_loop, ActiveOutcome, ActiveTrace, TraceRow};
pub use kcenter::{
    coverage_radius, pair_distance, select_kcenter_batch, FeatureSpace, KCenterTracker,
};
pub use select::{select_passive_batch, select_uncertainty_batch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Uncertainty,
    Kcenter,
    Passive,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Uncertainty => "uncertainty",
            StrategyKind::Kcenter => "kcenter",
            StrategyKind::Passive => "passive",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(Self::Uncertainty),
            "kcenter" => Ok(Self::Kcenter),
            "passive" => Ok(Self::Passive),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub batch_size: usize,
    pub budget: usize,
    pub init_pool_size: usize,
    #[serde(default)]
    pub distinct_cells: bool,
    #[serde(default = "default_true")]
    pub normalize_features: bool,
    #[serde(default)]
    pub seed: u64,
}

impl StrategyConfig {
    pub fn new(
        kind: StrategyKind,
        batch_size: usize,
        budget: usize,
        init_pool_size: usize,
    ) -> Self {
        Self {
            kind,
            batch_size,
            budget,
            init_pool_size,
            distinct_cells: false,
            normalize_features: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.init_pool_size == 0 {
            return Err(Error::Config("init_pool_size must be positive".into()));
        }
        Ok(())
    }
}

/// Known (queried) and candidate observations. Candidates double as the
/// test set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolPartition {
    pub known: BTreeSet<usize>,
    pub candidates: BTreeSet<usize>,
}

impl PoolPartition {
    /// Moves `ids` from candidates to known. Ids that are not candidates
    /// are an integrity error, so nothing is ever queried twice.
    pub fn query(&mut self, ids: &[usize]) -> Result<()> {
        for id in ids {
            if !self.candidates.remove(id) {
                return Err(Error::Integrity(format!("obs {id} is not a candidate")));
            }
            self.known.insert(*id);
        }
        Ok(())
    }
}

/// A selected batch. `exhausted` is set when fewer than the requested
/// number of candidates were available.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub exhausted: bool,
}

/// Uniformly random initial pool of `size` observations.
pub fn init_pool(table: &RatingsTable, size: usize, seed: u64) -> Result<PoolPartition> {
    let n = table.len();
    if size > n {
        return Err(Error::Config(format!(
            "initial pool of {size} exceeds the {n} available observations"
        )));
    }
    let mut rng = rng_from(seed);
    let known: BTreeSet<usize> = index::sample(&mut rng, n, size).into_iter().collect();
    let candidates = (0..n).filter(|i| !known.contains(i)).collect();
    Ok(PoolPartition { known, candidates })
}
