//! Experiment harness: metrics, raw trace files, aggregation and the
//! multi-arm runner behind the command-line tool.

mod experiment;
mod metrics;
mod trace;

pub use experiment::{
    aggregate_outputs, load_dataset, run_experiment, write_synthetic_files, ArmConfig,
    DatasetPaths, ExperimentConfig, ExperimentSummary, Manifest, OutputLayout, RunRecord,
    RunStatus,
};
pub use metrics::{confidence_interval, evaluate_rmse, smooth_curve, Band};
pub use trace::{
    aggregate_traces, read_aggregate, read_trace, write_aggregate, write_trace, AggregateRow,
    RawTraceRow,
};
