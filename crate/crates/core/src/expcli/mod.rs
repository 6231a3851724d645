//! Run configuration, metrics CSVs, ablation suites and rank-based arm
//! comparison behind the `poer` command line.

mod compare;
mod config;
mod metrics;
mod suite;

pub use compare::{
    compare_arms, final_metric, mann_whitney, median, ArmFiles, ArmSummary, ComparisonReport,
    PairComparison, RankTest, MIN_SEEDS,
};
pub use config::{MetricsConfig, RunConfig};
pub use metrics::{mean_std, read_csv, write_csv, MetricsRecord, MetricsSink, TimeAxis, COLUMNS};
pub use suite::{
    run_experiment, run_training, ArmResult, ArmSpec, ExperimentReport, ExperimentSuite, TrainOutcome,
};
