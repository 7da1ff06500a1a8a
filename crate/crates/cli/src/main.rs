use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use activebpmf::data::{
    generate_synthetic, load_features, load_predictions, load_ratings, reduce_features,
    subset_sample, write_features, write_ratings, ReduceMethod,
};
use activebpmf::harness::{
    aggregate_outputs, evaluate_rmse, run_experiment, write_synthetic_files,
};
use activebpmf::{ExperimentConfig, Hyperparams, SyntheticConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "activebpmf",
    version,
    about = "Active Bayesian matrix factorization experiments"
)]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (ratings, features, true weights).
    GenSynthetic {
        /// JSON SyntheticConfig; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reduce a feature matrix to fewer columns.
    Reduce {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value = "pca")]
        method: ReduceMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw a faces x traits x ratings-per-cell subset of a ratings file.
    Subset {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        faces: usize,
        #[arg(long)]
        traits: usize,
        #[arg(long)]
        per_cell: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every arm and repetition of an experiment config.
    Run(RunArgs),
    /// RMSE of cell predictions against a ratings file.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        /// Only score these observations (a file of obs_ids, one per line).
        #[arg(long)]
        ids: Option<PathBuf>,
    },
    /// Rebuild aggregate curves from the raw traces of a finished run.
    Aggregate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent runs; all cores when unset.
    #[arg(long, env = "ACTIVE_BPMF_WORKERS")]
    workers: Option<usize>,
}

fn load_config(
    path: &PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    if let Some(out) = out {
        config.output_dir = out;
    }
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::GenSynthetic { config, out, seed } => {
            let mut cfg = match config {
                Some(path) => serde_json::from_str(&fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                None => SyntheticConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let ds = generate_synthetic(&cfg)?;
            let paths = write_synthetic_files(&out, &ds)?;
            fs::write(
                out.join("synthetic_config.json"),
                serde_json::to_string_pretty(&cfg)?,
            )?;
            println!("{}", serde_json::to_string_pretty(&paths)?);
        }
        Command::Reduce {
            input,
            out,
            dim,
            method,
            seed,
        } => {
            let reduced = reduce_features(&load_features(&input)?, dim, method, seed)?;
            write_features(&out, &reduced)?;
        }
        Command::Subset {
            ratings,
            out,
            faces,
            traits,
            per_cell,
            seed,
        } => {
            let loaded = load_ratings(&ratings, Hyperparams::default().logit_clamp)?;
            let table = subset_sample(&loaded.table, faces, traits, per_cell, seed)?;
            write_ratings(&out, &table)?;
        }
        Command::Run(args) => {
            let config = load_config(&args.config, args.out, args.seed)?;
            let summary = run_experiment(&config, args.workers)?;
            println!("manifest: {}", summary.manifest.display());
            for path in &summary.aggregates {
                println!("aggregate: {}", path.display());
            }
            if !summary.failed_arms.is_empty() {
                bail!("arms {:?} failed; see the manifest", summary.failed_arms);
            }
        }
        Command::Eval {
            predictions,
            ratings,
            ids,
        } => {
            let preds: HashMap<_, _> = load_predictions(&predictions)?;
            let table = load_ratings(&ratings, Hyperparams::default().logit_clamp)?.table;
            let rmse = match ids {
                None => evaluate_rmse(&preds, table.observations())?,
                Some(path) => {
                    let text = fs::read_to_string(&path)?;
                    let chosen = text
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(|l| {
                            let id: usize = l.parse().with_context(|| format!("obs_id {l:?}"))?;
                            Ok(table.observation(id)?)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    evaluate_rmse(&preds, chosen)?
                }
            };
            println!("{rmse}");
        }
        Command::Aggregate { config, out } => {
            let config = load_config(&config, out, None)?;
            for path in aggregate_outputs(&config)? {
                println!("aggregate: {}", path.display());
            }
        }
    }
    Ok(())
}
