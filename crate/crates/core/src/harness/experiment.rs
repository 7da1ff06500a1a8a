//! Multi-arm experiment runner and its on-disk layout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trace::{aggregate_traces, read_trace, write_aggregate, write_trace, RawTraceRow};
use crate::active::{run_active_loop, ActiveOutcome, StrategyConfig};
use crate::data::{
    generate_synthetic, load_features, load_ratings, write_features, write_predictions,
    write_ratings, SyntheticConfig, SyntheticDataset,
};
use crate::model::{FeatureBank, Hyperparams, RatingsTable};
use crate::rng::{child_seed, mix_seed};
use crate::sampler::{ChainConfig, ChainSchedule};
use crate::{Error, Result};

const STRATEGY_STREAM: u64 = 1;
const CHAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub ratings: PathBuf,
    pub face_features: PathBuf,
    pub trait_features: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    /// Fixes the warmup/sample counts of every iteration to one schedule
    /// step; needs `schedule_k` alongside.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_option: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_k: Option<usize>,
}

impl ArmConfig {
    pub fn schedule(&self) -> Result<Option<ChainSchedule>> {
        match (self.schedule_option, self.schedule_k) {
            (None, None) => Ok(None),
            (Some(option), Some(k)) => {
                let s = ChainSchedule { option, k };
                s.counts()?;
                Ok(Some(s))
            }
            _ => Err(Error::Config(
                "schedule_option and schedule_k must be given together".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub hyper: Hyperparams,
    pub arms: Vec<ArmConfig>,
    pub repetitions: usize,
    pub smoothing_window: usize,
    pub ci_level: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative dataset paths are taken relative to
    /// the config file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if let (Some(ds), Some(base)) = (config.dataset.as_mut(), path.parent()) {
            for p in [
                &mut ds.ratings,
                &mut ds.face_features,
                &mut ds.trait_features,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => s.validate()?,
            _ => {
                return Err(Error::Config(
                    "exactly one of dataset and synthetic must be set".into(),
                ))
            }
        }
        if self.arms.is_empty() {
            return Err(Error::Config("experiment needs at least one arm".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing_window must be at least 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config("ci_level must lie in (0, 1)".into()));
        }
        self.hyper.validate()?;
        for (i, arm) in self.arms.iter().enumerate() {
            let tag = |e: Error| Error::Config(format!("arm {i}: {e}"));
            arm.strategy.validate().map_err(tag)?;
            arm.chain.validate().map_err(tag)?;
            arm.schedule().map_err(tag)?;
        }
        Ok(())
    }

    pub fn layout(&self) -> OutputLayout {
        OutputLayout::new(&self.output_dir)
    }
}

/// Loads the configured ratings and features, or generates the synthetic set.
pub fn load_dataset(config: &ExperimentConfig) -> Result<(RatingsTable, FeatureBank)> {
    match (&config.dataset, &config.synthetic) {
        (Some(paths), _) => {
            let loaded = load_ratings(&paths.ratings, config.hyper.logit_clamp)?;
            if loaded.clamped > 0 {
                log::info!("clamped {} boundary ratings", loaded.clamped);
            }
            let bank = FeatureBank::new(
                load_features(&paths.face_features)?,
                load_features(&paths.trait_features)?,
            )?;
            loaded.table.check_bank(&bank)?;
            Ok((loaded.table, bank))
        }
        (None, Some(cfg)) => {
            let ds = generate_synthetic(cfg)?;
            Ok((ds.table, ds.bank))
        }
        (None, None) => Err(Error::Config("no dataset configured".into())),
    }
}

/// Writes a synthetic dataset as ratings, feature and true-weight CSVs.
pub fn write_synthetic_files(dir: impl AsRef<Path>, ds: &SyntheticDataset) -> Result<DatasetPaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let paths = DatasetPaths {
        ratings: dir.join("ratings.csv"),
        face_features: dir.join("face_features.csv"),
        trait_features: dir.join("trait_features.csv"),
    };
    write_ratings(&paths.ratings, &ds.table)?;
    write_features(&paths.face_features, ds.bank.face_features())?;
    write_features(&paths.trait_features, ds.bank.trait_features())?;
    write_features(dir.join("true_face_weights.csv"), &ds.true_face_weights)?;
    write_features(dir.join("true_trait_weights.csv"), &ds.true_trait_weights)?;
    Ok(paths)
}

/// File locations under an output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn run_file(&self, dir: &str, arm: usize, rep: usize) -> PathBuf {
        self.root.join(dir).join(format!("arm{arm}_rep{rep}.csv"))
    }

    pub fn raw(&self, arm: usize, rep: usize) -> PathBuf {
        self.run_file("raw", arm, rep)
    }

    pub fn predictions(&self, arm: usize, rep: usize) -> PathBuf {
        self.run_file("predictions", arm, rep)
    }

    pub fn timing(&self, arm: usize, rep: usize) -> PathBuf {
        self.run_file("timing", arm, rep)
    }

    pub fn aggregate(&self, arm: usize) -> PathBuf {
        self.root.join("aggregate").join(format!("arm{arm}.csv"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    const DIRS: [&'static str; 4] = ["raw", "predictions", "timing", "aggregate"];

    /// Creates the directories and removes per-arm files left by earlier runs.
    fn prepare(&self) -> Result<()> {
        for dir in Self::DIRS {
            let dir = self.root.join(dir);
            fs::create_dir_all(&dir)?;
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                let stale = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("arm") && n.ends_with(".csv"));
                if stale {
                    fs::remove_file(path)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: usize,
    pub repetition: usize,
    pub child_seed: u64,
    pub strategy_seed: u64,
    pub chain_seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub iterations: usize,
    pub exhausted_at: Option<usize>,
    pub wallclock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub observations: usize,
    pub runs: Vec<RunRecord>,
    /// Per arm: `Ok` when every repetition finished and the aggregate was written.
    pub arms: Vec<RunStatus>,
    pub wallclock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub manifest: PathBuf,
    pub raw_traces: Vec<PathBuf>,
    pub aggregates: Vec<PathBuf>,
    pub failed_arms: Vec<usize>,
}

struct RunSeeds {
    child: u64,
    strategy: u64,
    chain: u64,
}

fn run_seeds(master: u64, arm: usize, rep: usize) -> RunSeeds {
    let child = child_seed(master, arm, rep);
    RunSeeds {
        child,
        strategy: mix_seed(child, STRATEGY_STREAM),
        chain: mix_seed(child, CHAIN_STREAM),
    }
}

fn write_run(layout: &OutputLayout, arm: usize, rep: usize, out: &ActiveOutcome) -> Result<()> {
    write_trace(layout.raw(arm, rep), &RawTraceRow::from_trace(&out.trace))?;
    write_predictions(layout.predictions(arm, rep), &out.final_predictions)?;
    let mut w = csv::Writer::from_path(layout.timing(arm, rep))?;
    w.write_record(["iteration", "wallclock_seconds"])?;
    for row in &out.trace.rows {
        w.write_record([row.iteration.to_string(), row.wallclock_seconds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn run_one(
    config: &ExperimentConfig,
    table: &RatingsTable,
    bank: &FeatureBank,
    layout: &OutputLayout,
    arm: usize,
    rep: usize,
) -> RunRecord {
    let seeds = run_seeds(config.master_seed, arm, rep);
    let arm_config = &config.arms[arm];
    let strategy = StrategyConfig {
        seed: seeds.strategy,
        ..arm_config.strategy
    };
    let chain = ChainConfig {
        seed: seeds.chain,
        ..arm_config.chain
    };
    let started = Instant::now();
    let result = arm_config
        .schedule()
        .and_then(|schedule| {
            run_active_loop(table, bank, &config.hyper, &strategy, &chain, schedule)
        })
        .and_then(|out| write_run(layout, arm, rep, &out).map(|()| out));
    let (status, iterations, exhausted_at) = match result {
        Ok(out) => (RunStatus::Ok, out.trace.rows.len(), out.trace.exhausted_at),
        Err(e) => {
            log::error!("arm {arm} repetition {rep} failed: {e}");
            (
                RunStatus::Failed {
                    error: e.to_string(),
                },
                0,
                None,
            )
        }
    };
    log::info!(
        "arm {arm} repetition {rep} finished in {:.1?}",
        started.elapsed()
    );
    RunRecord {
        arm,
        repetition: rep,
        child_seed: seeds.child,
        strategy_seed: seeds.strategy,
        chain_seed: seeds.chain,
        status,
        iterations,
        exhausted_at,
        wallclock_seconds: started.elapsed().as_secs_f64(),
    }
}

fn aggregate_arm(config: &ExperimentConfig, arm: usize) -> Result<PathBuf> {
    let layout = config.layout();
    let reps = (0..config.repetitions)
        .map(|r| read_trace(layout.raw(arm, r)))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate_traces(&reps, config.smoothing_window, config.ci_level)?;
    let path = layout.aggregate(arm);
    fs::create_dir_all(layout.root.join("aggregate"))?;
    write_aggregate(&path, &rows)?;
    Ok(path)
}

/// Re-aggregates every arm from the raw trace files already on disk.
pub fn aggregate_outputs(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    (0..config.arms.len())
        .map(|a| aggregate_arm(config, a))
        .collect()
}

/// Runs every arm and repetition, at most `workers` at a time (all cores
/// when `None`), then aggregates each arm from its raw files and writes the
/// manifest. A failing run marks its arm as failed; other arms carry on.
pub fn run_experiment(
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<ExperimentSummary> {
    config.validate()?;
    let started = Instant::now();
    let (table, bank) = load_dataset(config)?;
    let layout = config.layout();
    layout.prepare()?;

    let jobs: Vec<(usize, usize)> = (0..config.arms.len())
        .flat_map(|a| (0..config.repetitions).map(move |r| (a, r)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, r)| run_one(config, &table, &bank, &layout, a, r))
            .collect()
    });

    let mut arms = Vec::with_capacity(config.arms.len());
    let mut aggregates = Vec::new();
    let mut failed_arms = Vec::new();
    for a in 0..config.arms.len() {
        let failure = runs.iter().find_map(|run| match &run.status {
            RunStatus::Failed { error } if run.arm == a => {
                Some(format!("repetition {}: {error}", run.repetition))
            }
            _ => None,
        });
        let status = match failure {
            Some(error) => RunStatus::Failed { error },
            None => match aggregate_arm(config, a) {
                Ok(path) => {
                    aggregates.push(path);
                    RunStatus::Ok
                }
                Err(e) => RunStatus::Failed {
                    error: format!("aggregation: {e}"),
                },
            },
        };
        if status != RunStatus::Ok {
            failed_arms.push(a);
        }
        arms.push(status);
    }

    let raw_traces = runs
        .iter()
        .filter(|r| r.status == RunStatus::Ok)
        .map(|r| layout.raw(r.arm, r.repetition))
        .collect();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        observations: table.len(),
        runs,
        arms,
        wallclock_seconds: started.elapsed().as_secs_f64(),
    };
    fs::write(layout.manifest(), serde_json::to_string_pretty(&manifest)?)?;
    Ok(ExperimentSummary {
        manifest: layout.manifest(),
        raw_traces,
        aggregates,
        failed_arms,
    })
}
