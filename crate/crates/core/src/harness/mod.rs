//! Experiment protocol on synthetic or user-supplied populations.

mod experiment;
mod metrics;
mod report;
mod sensitivity;
mod synthetic;

pub use experiment::{
    budget_count, cold_start_accuracy, fit_setup, full_observation_accuracy, prepare_trial,
    run_experiment, run_method, DataSource, EvalRoute, ExperimentConfig, ExperimentResult,
    FitOptions, Method, MetricRecord, TrialSetup, TrialSummary,
};
pub use metrics::{accuracy, brier, perplexity, relative_recovery, LOG_FLOOR};
pub use report::{
    mean_accuracy, summarize, write_jsonl, write_plot_csv, write_summary_csv, SummaryRow,
};
pub use sensitivity::{sensitivity_table, tier_recovery, SensitivityTable, Tier, TIER_PERCENTS};
pub use synthetic::{generate_population, Population, SyntheticSpec};
