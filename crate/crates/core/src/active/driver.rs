use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use super::kcenter::{FeatureSpace, KCenterTracker};
use super::select::{select_passive_batch, select_uncertainty_batch};
use super::{init_pool, PoolPartition, StrategyConfig, StrategyKind};
use crate::harness::evaluate_rmse;
use crate::model::{Cell, FeatureBank, Hyperparams, ModelState, RatingsTable, TrainingData};
use crate::rng::{mix_seed, rng_from};
use crate::sampler::{aggregate_predictions, run_chain_on, ChainConfig, ChainSchedule, FreeBlocks};
use crate::{Error, Result};

// stream labels for seeds derived inside the loop
const PASSIVE_STREAM: u64 = 0x7061_7373;
const CHAIN_STREAM: u64 = 0x6368_6169;
const INIT_STREAM: u64 = 0x696e_6974;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub train_size: usize,
    /// `None` once every observation has been queried.
    pub test_rmse: Option<f64>,
    pub chain_warmup: usize,
    pub chain_samples: usize,
    pub accept_rate: f64,
    /// k-center objective after this iteration's batch (kcenter only).
    pub coverage_radius: Option<f64>,
    pub wallclock_seconds: f64,
    pub strategy_kind: StrategyKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActiveTrace {
    pub rows: Vec<TraceRow>,
    /// Iteration at which the candidate pool ran dry before the budget.
    pub exhausted_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ActiveOutcome {
    pub trace: ActiveTrace,
    /// Posterior-mean rating of every cell in the table, from the last fit.
    pub final_predictions: BTreeMap<Cell, f64>,
    pub final_partition: PoolPartition,
}

/// Runs the budgeted active loop.
///
/// Iteration `q = 0..=Q` fits a chain on the known pool (warm-started from
/// the previous iteration's final state and step size when configured),
/// aggregates predictions for every cell, records the test RMSE over the
/// candidates, and, while `q < Q`, queries one batch. The loop ends early
/// once no candidates remain. A `schedule` overrides the chain's warmup and
/// sample counts.
pub fn run_active_loop(
    table: &RatingsTable,
    bank: &FeatureBank,
    hyper: &Hyperparams,
    strategy: &StrategyConfig,
    chain: &ChainConfig,
    schedule: Option<ChainSchedule>,
) -> Result<ActiveOutcome> {
    strategy.validate()?;
    chain.validate()?;
    hyper.validate()?;
    table.check_bank(bank)?;
    if table.is_empty() {
        return Err(Error::Config("ratings table is empty".into()));
    }
    let (warmup, samples) = match schedule {
        Some(s) => s.counts()?,
        None => (chain.warmup, chain.samples),
    };

    let cells = table.cells();
    let mut partition = init_pool(table, strategy.init_pool_size, strategy.seed)?;
    let mut passive_rng = rng_from(mix_seed(strategy.seed, PASSIVE_STREAM));
    let space = (strategy.kind == StrategyKind::Kcenter)
        .then(|| FeatureSpace::new(bank, strategy.normalize_features));
    let mut tracker = match &space {
        Some(space) => Some(KCenterTracker::new(
            space,
            table,
            &partition.known,
            &partition.candidates,
        )?),
        None => None,
    };

    let mut trace = ActiveTrace::default();
    let mut previous: Option<(ModelState, f64)> = None;
    let mut final_predictions = BTreeMap::new();
    for q in 0..=strategy.budget {
        let started = Instant::now();
        let data = TrainingData::new(
            partition.known.iter().map(|&id| &table.observations()[id]),
            bank,
            hyper.logit_clamp,
        )?;
        let mut config = ChainConfig {
            warmup,
            samples,
            seed: mix_seed(mix_seed(chain.seed, CHAIN_STREAM), q as u64),
            ..*chain
        };
        let init = match (&previous, chain.warm_start) {
            (Some((state, step)), true) => {
                config.initial_step_size = *step;
                state.clone()
            }
            _ => {
                let mut rng = rng_from(mix_seed(mix_seed(chain.seed, INIT_STREAM), q as u64));
                ModelState::sample_prior(hyper, bank.face_dim(), bank.trait_dim(), &mut rng)?
            }
        };
        let bundle = run_chain_on(&init, &data, hyper, &config, FreeBlocks::ALL)?;
        let estimates = aggregate_predictions(&bundle, bank, &cells, chain.aggregation_window)?;
        let predictions: HashMap<Cell, f64> = cells
            .iter()
            .zip(&estimates)
            .map(|(&c, e)| (c, e.mean_r_hat))
            .collect();
        let test_rmse = if partition.candidates.is_empty() {
            None
        } else {
            Some(evaluate_rmse(
                &predictions,
                partition
                    .candidates
                    .iter()
                    .map(|&id| &table.observations()[id]),
            )?)
        };

        let last = q == strategy.budget || partition.candidates.is_empty();
        if !last {
            let p = strategy.batch_size;
            let batch = match strategy.kind {
                StrategyKind::Uncertainty => {
                    let spread: HashMap<Cell, f64> = cells
                        .iter()
                        .zip(&estimates)
                        .map(|(&c, e)| (c, e.std_r_star))
                        .collect();
                    let scores: HashMap<usize, f64> = partition
                        .candidates
                        .iter()
                        .map(|&id| (id, spread[&table.observations()[id].cell()]))
                        .collect();
                    let distinct = strategy.distinct_cells.then_some(table);
                    select_uncertainty_batch(&scores, &partition.candidates, p, distinct)?
                }
                StrategyKind::Kcenter => tracker
                    .as_mut()
                    .expect("tracker exists for kcenter")
                    .select(p),
                StrategyKind::Passive => {
                    select_passive_batch(&partition.candidates, p, &mut passive_rng)
                }
            };
            partition.query(&batch.ids)?;
        }
        let coverage_radius = tracker.as_ref().map(KCenterTracker::coverage_radius);

        trace.rows.push(TraceRow {
            iteration: q,
            train_size: data.n_observations(),
            test_rmse,
            chain_warmup: warmup,
            chain_samples: samples,
            accept_rate: bundle.accept_rate,
            coverage_radius,
            wallclock_seconds: started.elapsed().as_secs_f64(),
            strategy_kind: strategy.kind,
        });
        log::debug!(
            "{} q={q} train={} rmse={:?} accept={:.3} step={:.4}",
            strategy.kind,
            data.n_observations(),
            test_rmse,
            bundle.accept_rate,
            bundle.final_step_size
        );
        final_predictions = predictions.into_iter().collect();
        previous = Some((bundle.final_state, bundle.final_step_size));
        if last {
            if q < strategy.budget {
                trace.exhausted_at = Some(q);
            }
            break;
        }
    }

    Ok(ActiveOutcome {
        trace,
        final_predictions,
        final_partition: partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn instance() -> (RatingsTable, FeatureBank) {
        let ds = generate_synthetic(&SyntheticConfig {
            n_faces: 8,
            n_traits: 4,
            feat_dim_face: 3,
            feat_dim_trait: 2,
            true_latent_dim: 2,
            ratings_per_cell: 2,
            noise_precision: 4.0,
            seed: 3,
        })
        .unwrap();
        (ds.table, ds.bank)
    }

    fn hyper() -> Hyperparams {
        Hyperparams {
            latent_dim: 2,
            ..Hyperparams::default()
        }
    }

    fn chain() -> ChainConfig {
        ChainConfig {
            warmup: 5,
            samples: 6,
            leapfrog_steps: 5,
            seed: 9,
            ..ChainConfig::default()
        }
    }

    #[test]
    fn zero_budget_gives_single_row() {
        let (table, bank) = instance();
        let strategy = StrategyConfig::new(StrategyKind::Uncertainty, 3, 0, 5);
        let out = run_active_loop(&table, &bank, &hyper(), &strategy, &chain(), None).unwrap();
        assert_eq!(out.trace.rows.len(), 1);
        assert_eq!(
            out.final_partition,
            init_pool(&table, 5, strategy.seed).unwrap()
        );
        assert_eq!(out.final_predictions.len(), table.cells().len());
    }

    #[test]
    fn train_size_grows_by_batch_and_nothing_is_requeried() {
        let (table, bank) = instance();
        for kind in [
            StrategyKind::Uncertainty,
            StrategyKind::Kcenter,
            StrategyKind::Passive,
        ] {
            let strategy = StrategyConfig::new(kind, 3, 4, 5);
            let out = run_active_loop(&table, &bank, &hyper(), &strategy, &chain(), None).unwrap();
            let sizes: Vec<usize> = out.trace.rows.iter().map(|r| r.train_size).collect();
            assert_eq!(sizes, vec![5, 8, 11, 14, 17]);
            assert_eq!(out.final_partition.known.len(), 17);
            assert_eq!(out.final_partition.candidates.len(), table.len() - 17);
            assert!(out.trace.rows.iter().all(|r| r.test_rmse.is_some()));
            assert_eq!(
                out.trace.rows.iter().all(|r| r.coverage_radius.is_some()),
                kind == StrategyKind::Kcenter
            );
        }
    }

    #[test]
    fn exhaustion_stops_early() {
        let (table, bank) = instance();
        let n = table.len();
        let strategy = StrategyConfig::new(StrategyKind::Passive, 30, 10, n - 40);
        let out = run_active_loop(&table, &bank, &hyper(), &strategy, &chain(), None).unwrap();
        let sizes: Vec<usize> = out.trace.rows.iter().map(|r| r.train_size).collect();
        assert_eq!(sizes, vec![n - 40, n - 10, n]);
        assert_eq!(out.trace.exhausted_at, Some(2));
        assert_eq!(out.trace.rows.last().unwrap().test_rmse, None);
    }

    #[test]
    fn rerun_is_identical() {
        let (table, bank) = instance();
        let strategy = StrategyConfig::new(StrategyKind::Uncertainty, 2, 3, 4);
        let strip = |t: ActiveTrace| {
            t.rows
                .into_iter()
                .map(|r| TraceRow {
                    wallclock_seconds: 0.0,
                    ..r
                })
                .collect::<Vec<_>>()
        };
        let a = run_active_loop(&table, &bank, &hyper(), &strategy, &chain(), None).unwrap();
        let b = run_active_loop(&table, &bank, &hyper(), &strategy, &chain(), None).unwrap();
        assert_eq!(a.final_predictions, b.final_predictions);
        assert_eq!(a.final_partition, b.final_partition);
        assert_eq!(strip(a.trace), strip(b.trace));
    }

    #[test]
    fn schedule_overrides_chain_counts() {
        let (table, bank) = instance();
        let strategy = StrategyConfig::new(StrategyKind::Passive, 2, 1, 4);
        let schedule = ChainSchedule { option: 3, k: 2 };
        let out =
            run_active_loop(&table, &bank, &hyper(), &strategy, &chain(), Some(schedule)).unwrap();
        assert!(out
            .trace
            .rows
            .iter()
            .all(|r| (r.chain_warmup, r.chain_samples) == (10, 5)));
    }
}
