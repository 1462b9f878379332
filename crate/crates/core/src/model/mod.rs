//! Trial timelines, participant records and the semiparametric waning model.

pub mod indicators;
pub mod io;
mod record;
mod timeline;
mod waning;

pub use io::{read_records, read_records_path, write_records, write_records_path, DataError, Dataset};
pub use record::{validate_dataset, validate_record, Arm, Gamma, ParticipantRecord, Violation};
pub use timeline::TrialTimeline;
pub use waning::{g_grad, g_value, log_rate_ratio, ve_from_theta, Theta, WaningModelSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid timeline: {0}")]
    InvalidTimeline(String),
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("θ₁ has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("VE(τ) is only modelled for τ ≥ ℓ (τ={tau}, ℓ={lag})")]
    TauBeforeLag { tau: f64, lag: f64 },
}
