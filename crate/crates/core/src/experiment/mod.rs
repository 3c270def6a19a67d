//! The four experiment templates, learning-rate grid search with
//! best-validation selection, artifact persistence and result tables.

mod config;
mod report;
mod run;

pub use config::{ExperimentConfig, Layout, Protocol, SourceSpec, Template};
pub use report::{round4, ExperimentReport, ReportCell, ReportFormat, ReportRow};
pub use run::{
    assemble_report, grid_select, run_experiment, trial_id, ExperimentOutcome, TrialResult, REPORT_TEXT, REPORT_TSV,
    TIMINGS, TRIALS_DIR, TRIALS_JSON,
};
