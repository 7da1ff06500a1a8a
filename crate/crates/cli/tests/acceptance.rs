//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails. Run with `cargo test -p activebpmf-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use activebpmf::active::select_uncertainty_batch;
use activebpmf::data::{generate_synthetic, subset_sample, write_ratings};
use activebpmf::harness::{
    read_aggregate, read_trace, run_experiment, write_synthetic_files, ArmConfig, DatasetPaths,
};
use activebpmf::rng::rng_from;
use activebpmf::sampler::chain_schedule;
use activebpmf::{
    ChainConfig, ChainSchedule, ExperimentConfig, Hyperparams, StrategyConfig, StrategyKind,
    SyntheticConfig,
};
use rand::Rng;

type Check = Result<String, String>;

fn criterion(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let started = Instant::now();
    let result = f();
    let elapsed = started.elapsed();
    let (pass, detail) = match result {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
        Err(d) => (false, d),
    };
    println!(
        "criterion {id} {} {name} ({:.1}s): {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let err = common::gradient_fd_error(&common::random_instance(seed), 1e-5);
        ensure(err < 1e-5, || {
            format!("instance {seed}: relative error {err:e}")
        })?;
        worst = worst.max(err);
    }
    Ok(format!("20 instances, worst relative error {worst:.2e}"))
}

fn calibration() -> Check {
    let mut zs = Vec::new();
    for seed in 0..5 {
        let c = common::conjugate_calibration(seed, 2000);
        let z = (c.chain_mean - c.exact_mean).abs() / c.mcse;
        ensure(z <= 3.0, || {
            format!(
                "seed {seed}: chain {:.5} exact {:.5} is {z:.2} MCSE away",
                c.chain_mean, c.exact_mean
            )
        })?;
        zs.push(format!("{z:.2}"));
    }
    Ok(format!("|mean - exact| / MCSE = [{}]", zs.join(", ")))
}

fn selection_oracles() -> Check {
    let mut rng = rng_from(2718);
    let candidates: BTreeSet<usize> = (0..100).collect();
    for map in 0..1000 {
        // coarse values force many ties
        let scores: HashMap<usize, f64> = (0..100)
            .map(|i| (i, rng.random_range(0..25) as f64 / 4.0))
            .collect();
        let got =
            select_uncertainty_batch(&scores, &candidates, 8, None).map_err(|e| e.to_string())?;
        let mut sorted: Vec<(usize, f64)> = scores.iter().map(|(&k, &v)| (k, v)).collect();
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<usize> = sorted.iter().take(8).map(|x| x.0).collect();
        ensure(got.ids == want, || {
            format!("map {map}: {:?} != {want:?}", got.ids)
        })?;
    }

    let mut instances = 0;
    let mut worst_ratio: f64 = 0.0;
    for n in 2..=12 {
        for n_known in 1..n.min(4) {
            for p in 1..=3.min(n - n_known) {
                for rep in 0..5 {
                    let seed = (n * 1000 + n_known * 100 + p * 10 + rep) as u64 ^ 0xACCE;
                    let inst = common::kcenter_instance(n, n_known, seed);
                    let (greedy, optimal) = common::kcenter_vs_optimal(&inst, p);
                    ensure(greedy <= 2.0 * optimal + 1e-12, || {
                        format!("n={n} p={p} seed={seed}: greedy {greedy} > 2 x optimal {optimal}")
                    })?;
                    if optimal > 0.0 {
                        worst_ratio = worst_ratio.max(greedy / optimal);
                    }
                    instances += 1;
                }
            }
        }
    }
    Ok(format!(
        "1000 score maps match; {instances} k-center instances, worst greedy/optimal {worst_ratio:.3}"
    ))
}

fn arm(
    kind: StrategyKind,
    batch: usize,
    budget: usize,
    init: usize,
    schedule: Option<ChainSchedule>,
) -> ArmConfig {
    ArmConfig {
        strategy: StrategyConfig {
            // one observation per cell before repeats: every rating of a
            // cell shares the cell's score
            distinct_cells: kind == StrategyKind::Uncertainty,
            ..StrategyConfig::new(kind, batch, budget, init)
        },
        chain: ChainConfig::default(),
        schedule_option: schedule.map(|s| s.option),
        schedule_k: schedule.map(|s| s.k),
    }
}

fn hyper() -> Hyperparams {
    Hyperparams {
        latent_dim: 4,
        noise_precision: 4.0,
        ..Hyperparams::default()
    }
}

fn experiment(out: &Path, dataset: Option<DatasetPaths>, arms: Vec<ArmConfig>) -> ExperimentConfig {
    ExperimentConfig {
        synthetic: dataset.is_none().then(SyntheticConfig::default),
        dataset,
        hyper: hyper(),
        arms,
        repetitions: 5,
        smoothing_window: 1,
        ci_level: 0.95,
        output_dir: out.to_path_buf(),
        master_seed: 0,
    }
}

/// Mean test RMSE per iteration of each arm, with the train sizes.
fn run_arms(config: &ExperimentConfig) -> Result<Vec<Vec<(usize, f64)>>, String> {
    let summary = run_experiment(config, None).map_err(|e| e.to_string())?;
    ensure(summary.failed_arms.is_empty(), || {
        format!("arms {:?} failed", summary.failed_arms)
    })?;
    (0..config.arms.len())
        .map(|a| {
            read_aggregate(config.layout().aggregate(a))
                .map(|rows| {
                    rows.iter()
                        .map(|r| (r.train_size, r.mean_test_rmse))
                        .collect()
                })
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn active_beats_passive() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let arms = vec![
        arm(StrategyKind::Uncertainty, 8, 60, 8, None),
        arm(StrategyKind::Passive, 8, 60, 8, None),
    ];
    let curves = run_arms(&experiment(dir.path(), None, arms))?;
    let (u, p) = (&curves[0], &curves[1]);
    ensure(u.len() == 61 && p.len() == 61, || {
        "expected 61 iterations per arm".into()
    })?;
    let window: Vec<usize> = (0..61).filter(|&q| (100..=400).contains(&u[q].0)).collect();
    let wins = window.iter().filter(|&&q| u[q].1 <= p[q].1).count();
    let frac = wins as f64 / window.len() as f64;
    let (uf, pf) = (u[60].1, p[60].1);
    let detail = format!(
        "uncertainty <= passive at {wins}/{} iterations with 100..=400 training ratings; final {uf:.3} vs {pf:.3}",
        window.len()
    );
    ensure(frac >= 0.7 && uf < pf, || detail.clone())?;
    Ok(detail)
}

/// The 10 x 10 x 10 subset written in the ratings/feature CSV schema.
fn subset_dataset(dir: &Path) -> Result<DatasetPaths, String> {
    let parent = generate_synthetic(&SyntheticConfig {
        n_faces: 20,
        n_traits: 12,
        ratings_per_cell: 12,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut paths = write_synthetic_files(dir, &parent).map_err(|e| e.to_string())?;
    let table = subset_sample(&parent.table, 10, 10, 10, 0).map_err(|e| e.to_string())?;
    paths.ratings = dir.join("subset_ratings.csv");
    write_ratings(&paths.ratings, &table).map_err(|e| e.to_string())?;
    Ok(paths)
}

fn schedule_ordering() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = subset_dataset(&dir.path().join("data"))?;
    let lengths = [80, 160, 240];
    let mut arms = Vec::new();
    for total in lengths {
        for option in 1..=3 {
            let schedule =
                ChainSchedule::for_total_length(option, total).map_err(|e| e.to_string())?;
            arms.push(arm(StrategyKind::Passive, 2, 150, 50, Some(schedule)));
        }
    }
    let curves = run_arms(&experiment(&dir.path().join("out"), Some(data), arms))?;
    let finals: Vec<f64> = curves
        .iter()
        .map(|c| c.last().map(|x| x.1).unwrap_or(f64::NAN))
        .collect();
    ensure(
        curves.iter().all(|c| c.last().map(|x| x.0) == Some(350)),
        || "passive arms should end at 350 training ratings".into(),
    )?;
    let detail = lengths
        .iter()
        .enumerate()
        .map(|(i, total)| {
            format!(
                "{total}: [{:.3}, {:.3}, {:.3}]",
                finals[3 * i],
                finals[3 * i + 1],
                finals[3 * i + 2]
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let detail = format!("final RMSE by option 1/2/3 at length {detail}");
    ensure(finals[6] <= finals[7] && finals[6] <= finals[8], || {
        detail.clone()
    })?;
    Ok(detail)
}

fn subset_active_beats_passive() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = subset_dataset(&dir.path().join("data"))?;
    let schedule = ChainSchedule::for_total_length(1, 240).map_err(|e| e.to_string())?;
    let arms = vec![
        arm(StrategyKind::Uncertainty, 2, 150, 50, Some(schedule)),
        arm(StrategyKind::Passive, 2, 150, 50, Some(schedule)),
    ];
    let curves = run_arms(&experiment(&dir.path().join("out"), Some(data), arms))?;
    let (u, p) = (curves[0].last().unwrap(), curves[1].last().unwrap());
    ensure(u.0 == 350 && p.0 == 350, || {
        "arms should end at 350 training ratings".into()
    })?;
    let detail = format!(
        "final RMSE at 350 ratings: uncertainty {:.3} vs passive {:.3}",
        u.1, p.1
    );
    ensure(u.1 < p.1, || detail.clone())?;
    Ok(detail)
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_activebpmf"))
        .args(args)
        .env_remove("ACTIVE_BPMF_WORKERS")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "activebpmf {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    Ok(out.stdout)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn same_files(a: &Path, b: &Path, names: &[String]) -> Result<(), String> {
    for name in names {
        let x = fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(x == y, || format!("{name} differs between reruns"))?;
    }
    Ok(())
}

fn exp_config_json(
    data: &DatasetPaths,
    out: &Path,
    arms: &[(StrategyKind, usize)],
    budget: usize,
) -> String {
    let arms: Vec<serde_json::Value> = arms
        .iter()
        .map(|&(kind, p)| {
            serde_json::json!({
                "strategy": {"kind": kind, "batch_size": p, "budget": budget, "init_pool_size": p},
                "chain": {"warmup": 10, "samples": 15, "leapfrog_steps": 10}
            })
        })
        .collect();
    serde_json::json!({
        "dataset": data,
        "hyper": {"latent_dim": 4, "noise_precision": 4.0},
        "arms": arms,
        "repetitions": 2,
        "smoothing_window": 5,
        "ci_level": 0.95,
        "output_dir": out,
        "master_seed": 7
    })
    .to_string()
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let synth = root.join("synth.json");
    let small = SyntheticConfig {
        n_faces: 12,
        n_traits: 5,
        ratings_per_cell: 3,
        ..SyntheticConfig::default()
    };
    fs::write(&synth, serde_json::to_string(&small).unwrap()).map_err(|e| e.to_string())?;
    let mut compared = 0;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let base = root.join(run);
        let data = base.join("data");
        cli(&["gen-synthetic", "--config", s(&synth), "--out", s(&data)])?;
        cli(&[
            "reduce",
            "--input",
            s(&data.join("face_features.csv")),
            "--out",
            s(&base.join("pca.csv")),
            "--dim",
            "3",
        ])?;
        cli(&[
            "reduce",
            "--input",
            s(&data.join("face_features.csv")),
            "--out",
            s(&base.join("rp.csv")),
            "--dim",
            "3",
            "--method",
            "random_projection",
            "--seed",
            "4",
        ])?;
        cli(&[
            "subset",
            "--ratings",
            s(&data.join("ratings.csv")),
            "--out",
            s(&base.join("subset.csv")),
            "--faces",
            "6",
            "--traits",
            "4",
            "--per-cell",
            "2",
            "--seed",
            "3",
        ])?;
        let paths = DatasetPaths {
            ratings: data.join("ratings.csv"),
            face_features: data.join("face_features.csv"),
            trait_features: data.join("trait_features.csv"),
        };
        let arms = [
            (StrategyKind::Uncertainty, 4),
            (StrategyKind::Kcenter, 4),
            (StrategyKind::Passive, 4),
        ];
        let cfg = base.join("exp.json");
        fs::write(&cfg, exp_config_json(&paths, &base.join("out"), &arms, 5))
            .map_err(|e| e.to_string())?;
        cli(&["run", "--config", s(&cfg)])?;
        fs::remove_dir_all(base.join("out/aggregate")).map_err(|e| e.to_string())?;
        cli(&["aggregate", "--config", s(&cfg)])?;
        let rmse = cli(&[
            "eval",
            "--predictions",
            s(&base.join("out/predictions/arm0_rep1.csv")),
            "--ratings",
            s(&data.join("ratings.csv")),
        ])?;
        outputs.push(rmse);
    }
    let mut names: Vec<String> = [
        "data/ratings.csv",
        "data/face_features.csv",
        "pca.csv",
        "rp.csv",
        "subset.csv",
    ]
    .map(String::from)
    .to_vec();
    for a in 0..3 {
        for r in 0..2 {
            names.push(format!("out/raw/arm{a}_rep{r}.csv"));
            names.push(format!("out/predictions/arm{a}_rep{r}.csv"));
        }
        names.push(format!("out/aggregate/arm{a}.csv"));
    }
    same_files(&root.join("a"), &root.join("b"), &names)?;
    compared += names.len();
    ensure(outputs[0] == outputs[1], || "eval output differs".into())?;
    let raw = read_trace(root.join("a/out/raw/arm0_rep0.csv")).map_err(|e| e.to_string())?;
    ensure(raw.len() == 6, || {
        format!("expected 6 trace rows, got {}", raw.len())
    })?;
    Ok(format!(
        "{} files and eval output byte-identical across reruns",
        compared
    ))
}

fn schedule_exactness() -> Check {
    for k in 1..=50 {
        for (option, want) in [(1u8, (3 * k, 5 * k)), (2, (0, 5 * k)), (3, (5 * k, 5))] {
            let got = chain_schedule(option, k).map_err(|e| e.to_string())?;
            ensure(got == want, || {
                format!("option {option} k={k}: {got:?} != {want:?}")
            })?;
        }
    }
    Ok("150 (option, k) pairs exact".into())
}

/// Runs the batch 5/8/10 x strategy grid through the CLI on a dataset in
/// the documented CSV schema. Set `ACTIVE_BPMF_DATA` to a directory holding
/// ratings.csv, face_features.csv and trait_features.csv to use real data;
/// otherwise a synthetic set is written in the same schema.
fn real_schema_pipeline() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, source) = match std::env::var_os("ACTIVE_BPMF_DATA") {
        Some(d) => {
            let d = Path::new(&d).to_path_buf();
            (
                DatasetPaths {
                    ratings: d.join("ratings.csv"),
                    face_features: d.join("face_features.csv"),
                    trait_features: d.join("trait_features.csv"),
                },
                "supplied data",
            )
        }
        None => {
            let ds = generate_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
            (
                write_synthetic_files(dir.path().join("data"), &ds).map_err(|e| e.to_string())?,
                "synthetic data in the ratings schema",
            )
        }
    };
    let mut arms = Vec::new();
    for p in [5, 8, 10] {
        for kind in [
            StrategyKind::Uncertainty,
            StrategyKind::Kcenter,
            StrategyKind::Passive,
        ] {
            arms.push((kind, p));
        }
    }
    let out = dir.path().join("out");
    let cfg = dir.path().join("exp1.json");
    fs::write(&cfg, exp_config_json(&data, &out, &arms, 4)).map_err(|e| e.to_string())?;
    cli(&["run", "--config", s(&cfg)])?;
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(out.join("manifest.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let statuses = manifest["arms"].as_array().cloned().unwrap_or_default();
    ensure(
        statuses.len() == 9 && statuses.iter().all(|s| s["status"] == "ok"),
        || format!("arm statuses {statuses:?}"),
    )?;
    for a in 0..9 {
        let rows =
            read_aggregate(out.join(format!("aggregate/arm{a}.csv"))).map_err(|e| e.to_string())?;
        ensure(rows.len() == 5, || {
            format!("arm {a}: {} aggregate rows", rows.len())
        })?;
    }
    Ok(format!("9 arms x 2 repetitions completed on {source}"))
}

fn main() {
    // `cargo test` passes harness flags; this suite always runs in full.
    let min = Duration::from_secs(60);
    let long = Duration::from_secs(15 * 60);
    let results = [
        criterion(
            1,
            "gradient matches finite differences",
            Duration::from_secs(10),
            gradient,
        ),
        criterion(
            2,
            "sampler calibration on the conjugate case",
            min,
            calibration,
        ),
        criterion(3, "batch selection oracles", min, selection_oracles),
        criterion(
            4,
            "uncertainty beats passive on synthetic data",
            long,
            active_beats_passive,
        ),
        criterion(
            5,
            "schedule option 1 best at the longest chain",
            long,
            schedule_ordering,
        ),
        criterion(
            6,
            "batch-2 uncertainty beats passive on the subset",
            long,
            subset_active_beats_passive,
        ),
        criterion(7, "CLI reruns are byte-identical", min, cli_determinism),
        criterion(
            8,
            "chain schedule exactness",
            Duration::from_secs(1),
            schedule_exactness,
        ),
        criterion(
            9,
            "batch 5/8/10 strategy grid runs end to end",
            long,
            real_schema_pipeline,
        ),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
