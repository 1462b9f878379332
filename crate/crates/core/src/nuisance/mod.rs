//! Nuisance models for unblinding, entry and crossover agreement, and the
//! stabilized inverse-probability weights built from them.

mod cox;
mod design;
pub mod ipw;
mod logistic;
mod newton;
mod step;
mod weights;

pub use cox::{fit_cox, CoxFit, CoxRow, Window};
pub use design::{DesignSpec, Term};
pub use ipw::{h_blinded, h_unblinded, AssignmentLaw};
pub use logistic::{expit, fit_logistic, LogisticFit};
pub use newton::NewtonOptions;
pub use step::StepFunction;
pub use weights::{
    stabilized_weight_blinded, stabilized_weight_unblinded, BlindedWeight, KrCumhaz, NuisanceFit, NuisanceOptions,
    ReferenceCovariates, StabilizedWeights, NUISANCE_FORMAT_VERSION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NuisanceError {
    #[error("no events in the fit window")]
    NoEvents,
    #[error("no rows to fit")]
    NoRows,
    #[error("monotone likelihood: coefficient {coefficient} diverges")]
    MonotoneLikelihood { coefficient: usize },
    #[error("separation: coefficient {coefficient} diverges")]
    Separation { coefficient: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("singular information matrix")]
    Singular,
    #[error("no convergence after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("covariate dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("positivity violation: {0}")]
    Positivity(String),
    #[error("bad nuisance document: {0}")]
    Format(String),
    #[error("{model}: {source}")]
    Model {
        model: &'static str,
        #[source]
        source: Box<NuisanceError>,
    },
}

impl NuisanceError {
    pub(crate) fn in_model(self, model: &'static str) -> Self {
        NuisanceError::Model {
            model,
            source: Box::new(self),
        }
    }

    /// The error with any model context removed.
    pub fn root(&self) -> &NuisanceError {
        match self {
            NuisanceError::Model { source, .. } => source.root(),
            other => other,
        }
    }
}
