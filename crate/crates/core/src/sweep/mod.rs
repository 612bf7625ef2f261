//! Trial sampling, execution, the results store and report emission.

mod plan;
mod pool;
mod report;
mod run;
mod store;

pub use plan::{
    default_steps, sample_trial_config, Job, RunPlan, SweepContext, DEFAULT_EVAL_BATCH, DEFAULT_SEEDS,
    DEFAULT_TRIALS, LARGE_DATASET_INSTANCES, LONG_STEPS, SHORT_STEPS,
};
pub use pool::{run_sweep, run_sweep_with, JobRunner, StopFlags, SweepSummary};
pub use report::{
    aggregate_report, format_cell, group_records, mean_std, select_all, Cell, Group, GroupSelection,
    ReportRow, ReportTable, SelectionReport, MISSING_CELL, SINGLE_SEED_FLAG,
};
pub use run::{data_splits, failed_trial, run_trial, train_model, DataSplits, MetricRecord, TrialOutput, METRIC_INTERVAL};
pub use store::{trial_key, ResultsStore, StoreContents, StoreLine, TrialKey};
