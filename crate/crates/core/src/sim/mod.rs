//! Synthetic trials following the Monte Carlo design: covariates, staggered
//! entry, requested and scheduled unblinding, crossover agreement and
//! frailty-modulated infection hazards with waning.

mod config;
mod generate;
mod hazard;

pub use config::{ComparisonScale, ScenarioConfig, ScenarioOverrides, ScenarioPreset};
pub use generate::{
    generate_dataset, generate_participant, generate_participants, participant_rng, replication_seed,
    SimulatedParticipant,
};
pub use hazard::{
    cumulative_hazard, invert_piecewise_hazard, potential_hazard, potential_segments, potential_time, Segment,
    SubjectRates,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("simulation supports piecewise-constant waning only")]
    UnsupportedWaning,
    #[error("potential hazard requested at t={t} not after entry e={e}")]
    HazardBeforeEntry { t: f64, e: f64 },
}
