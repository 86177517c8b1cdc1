//! Evaluation metrics, experiment orchestration and file formats for the `caosd` tool.

pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod synthetic;

pub use error::{HarnessError, Result};
pub use evaluation::{evaluate_approach, Approach, EvalSettings, Market};
pub use experiment::{
    generate_configs, generate_specs, load_reports, run_experiment, run_experiment_matrix,
    summarize_dir, write_summaries, ExperimentSpec, ExternalResult, Failure, MatrixOutcome,
    MatrixSettings,
};
pub use metrics::{
    aggregate, bootstrap_ci, build_report, interval, mean_ci, AggregateRow, ApproachMetrics,
    CiMethod, Environment, Interval, MetricsReport, CAOSD, RANDOM,
};
