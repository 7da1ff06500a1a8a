//! Bayesian bilinear matrix factorization over two-sided feature banks,
//! fit by Hamiltonian Monte Carlo, plus batched active-learning loops
//! (uncertainty, k-center greedy, passive) that query ratings one batch
//! at a time.
//!
//! Module map:
//!
//! - [`model`]: ratings, feature banks, the bilinear model and its log-posterior.
//! - [`sampler`]: leapfrog/Metropolis chains, prediction aggregation, chain schedules.
//! - [`active`]: pool partitions, batch selection strategies and the active loop.
//! - [`data`]: CSV ingestion, synthetic data, subsetting and feature reduction.
//! - [`harness`]: metrics and the experiment runner behind the CLI.

pub mod active;
pub mod data;
mod error;
pub mod harness;
pub mod hmc;
pub mod model;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};

pub use active::{
    run_active_loop, ActiveOutcome, ActiveTrace, Batch, PoolPartition, StrategyConfig,
    StrategyKind, TraceRow,
};
pub use data::SyntheticConfig;
pub use harness::{ExperimentConfig, ExperimentSummary};
pub use model::{
    Cell, FeatureBank, Hyperparams, ModelState, Observation, RatingsTable, TrainingData,
};
pub use sampler::{ChainConfig, ChainSchedule, PosteriorBundle};
