//! Experiment runner: expands a sweep into deployment plans, runs each
//! point through the orchestrator and reports aggregates, derived scaling
//! metrics, plots and threshold verdicts.
//!
//! `report.json` holds a [`ScalingReport`]: one [`PointResult`] per sweep
//! point (per-component [`ComponentSummary`], efficiency and speedup
//! against the first point, one [`RunOutcome`] per repetition), the checks
//! copied from the experiment file and their [`Verdict`]s.

mod plot;
mod report;
mod run;
mod spec;

use std::path::PathBuf;

use thiserror::Error;

pub use plot::{line_chart, plot_report};
pub use report::{
    check_properties, derive_metrics, summarize, ComponentSummary, PointResult, RunOutcome,
    ScalingReport, Verdict, VerdictStatus,
};
pub use run::{expected_rows, merge_and_plot, merge_dir, run_experiment, RunOptions};
pub use spec::{
    builtin_ids, builtin_spec, set_path, Check, CheckKind, ExperimentSpec, Metric, ModelGen,
    Operand, SweepPoint,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("experiment spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("no csv files in {}", .0.display())]
    Empty(PathBuf),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Plan(#[from] crate::orchestrator::PlanError),
}
