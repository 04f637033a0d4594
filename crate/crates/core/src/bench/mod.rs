//! Benchmark harness: configuration, online predictors, the run loop and
//! reporting.

pub mod config;
pub mod predictor;
pub mod report;
pub mod runner;

pub use config::{
    Backend, EstimatorKind, EstimatorSpec, ExperimentConfig, Metric, StackMode, TrajectorySource,
};
pub use predictor::{build_predictor, BuildContext, OnlinePredictor};
pub use report::{emit_report, median_over, render_summary, render_table, ReportFormat};
pub use runner::{
    accumulated_error, estimator_rng, load_config_trajectory, run_all, run_experiment,
    run_on_trajectory, CovarianceHealth, EstimatorReport, RunReport,
};
