//! Weighted estimating equations for θ: process construction, Newton
//! solution, sandwich covariance and VE reporting.

mod equations;
mod pipeline;
mod processes;
mod report;
mod solve;

pub use equations::{estimating_function, estimating_jacobian};
pub use pipeline::{
    bootstrap_cov, estimate, estimate_with, BootstrapCov, Estimate, EstimateOptions, WeightDiagnostics, WeightMode,
};
pub use processes::{
    at_risk_b, at_risk_u, build_processes, Exposure, ExposureWeight, Interval, Process, RiskSums, WeightedProcesses,
    Weights,
};
pub use report::{default_taus, report_ve, wald_waning, VeEstimate, WaldTest};
pub use solve::{
    coordinate_name, influence_contributions, sandwich_cov, solve_theta, EstimationResult, IterationRecord,
    SolverOptions,
};

use crate::model::ModelError;
use crate::nuisance::NuisanceError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimationError {
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("empty risk set at {process:?} jump time {time}")]
    DegenerateRiskSet { process: Process, time: f64 },
    #[error("{coordinate} is not identified: {reason}")]
    Identifiability { coordinate: String, reason: String },
    #[error("Newton-Raphson did not converge in {iterations} iterations (‖EF‖∞ = {ef_norm:e})")]
    NonConvergence { iterations: usize, ef_norm: f64 },
    #[error("invalid data: {n} violations, first at record {first}: {detail}")]
    InvalidData { n: usize, first: usize, detail: String },
    #[error("bootstrap failed: {succeeded} of {reps} resamples succeeded")]
    Bootstrap { succeeded: usize, reps: usize },
    #[error("inconsistent weights: {0}")]
    InconsistentWeights(String),
}
