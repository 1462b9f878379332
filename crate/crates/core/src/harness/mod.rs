//! Command-line driver: single-dataset estimation, dataset simulation and
//! Monte Carlo studies with summary tables.

mod config;
mod run;
mod study;
mod table;

pub use config::{RunConfig, RunMode, WeightSelection};
pub use run::{estimate_report, render_report, run_estimate, run_simulate, EstimateReport, EstimateRun};
pub use study::{
    run_mc_study, summarize, EstimandSummary, ModeSummary, MonteCarloSummary, RepEstimate, ReplicationOutcome,
    StudyOutput, TestSummary,
};
pub use table::{emit_table, render_text, write_replications, SummaryRow, TableFormat, SUMMARY_SCHEMA};

use std::path::PathBuf;

use crate::estimator::EstimationError;
use crate::model::{DataError, ModelError};
use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("{failed} of {reps} replications failed with {weight_mode} weights (limit {limit}); first: {first}")]
    TooManyFailures {
        weight_mode: crate::estimator::WeightMode,
        failed: usize,
        reps: usize,
        limit: usize,
        first: String,
    },
    #[error("{} invalid record(s):\n{}", .0.len(), .0.join("\n"))]
    InvalidData(Vec<String>),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
