use serde::{Deserialize, Serialize};

use super::ModelError;

/// Functional form of the waning term `g(u; θ₁)` in the log rate ratio
/// `θ₀ + g(τ − ℓ; θ₁)`.
///
/// Both forms are linear in θ₁, so `g(u; θ₁) = θ₁ᵀ b(u)` for a basis `b`
/// returned by [`WaningModelSpec::basis_into`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaningModelSpec {
    /// `g(u) = θ₁·u`.
    Linear,
    /// `g(u) = Σ_j θ₁ⱼ·I(v_j < u ≤ v_{j+1})`, the last segment unbounded.
    PiecewiseConstant { knots: Vec<f64> },
}

impl WaningModelSpec {
    /// `g(u) = θ₁·I(u > v)`.
    pub fn single_knot(v: f64) -> Self {
        WaningModelSpec::PiecewiseConstant { knots: vec![v] }
    }

    pub fn piecewise(knots: Vec<f64>) -> Result<Self, ModelError> {
        let spec = WaningModelSpec::PiecewiseConstant { knots };
        spec.validate(None)?;
        Ok(spec)
    }

    pub fn dim_theta1(&self) -> usize {
        match self {
            WaningModelSpec::Linear => 1,
            WaningModelSpec::PiecewiseConstant { knots } => knots.len(),
        }
    }

    pub fn is_piecewise(&self) -> bool {
        matches!(self, WaningModelSpec::PiecewiseConstant { .. })
    }

    pub fn knots(&self) -> &[f64] {
        match self {
            WaningModelSpec::Linear => &[],
            WaningModelSpec::PiecewiseConstant { knots } => knots,
        }
    }

    /// Knots must be nonnegative, strictly increasing and, when an analysis
    /// time is given, no later than it.
    pub fn validate(&self, analysis_time: Option<f64>) -> Result<(), ModelError> {
        if let WaningModelSpec::PiecewiseConstant { knots } = self {
            if knots.is_empty() {
                return Err(ModelError::InvalidKnots("at least one knot is required".into()));
            }
            if knots.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ModelError::InvalidKnots("knots must be finite and >= 0".into()));
            }
            if knots.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ModelError::InvalidKnots("knots must be strictly increasing".into()));
            }
            if let Some(l) = analysis_time {
                if knots.iter().any(|v| *v > l) {
                    return Err(ModelError::InvalidKnots(format!(
                        "knots must not exceed the analysis time {l}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes `∂g/∂θ₁` at `u` into `out` (length `dim_theta1`).
    pub fn basis_into(&self, u: f64, out: &mut [f64]) {
        match self {
            WaningModelSpec::Linear => out[0] = u,
            WaningModelSpec::PiecewiseConstant { knots } => {
                let k = knots.len();
                for (j, slot) in out.iter_mut().enumerate().take(k) {
                    let above = u > knots[j];
                    let below_next = j + 1 == k || u <= knots[j + 1];
                    *slot = if above && below_next { 1.0 } else { 0.0 };
                }
            }
        }
    }

    fn check_dim(&self, theta1: &[f64]) -> Result<(), ModelError> {
        if theta1.len() != self.dim_theta1() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim_theta1(),
                found: theta1.len(),
            });
        }
        Ok(())
    }

    pub fn g_value(&self, theta1: &[f64], u: f64) -> Result<f64, ModelError> {
        let grad = self.g_grad(theta1, u)?;
        Ok(grad.iter().zip(theta1).map(|(b, t)| b * t).sum())
    }

    pub fn g_grad(&self, theta1: &[f64], u: f64) -> Result<Vec<f64>, ModelError> {
        self.check_dim(theta1)?;
        let mut out = vec![0.0; self.dim_theta1()];
        self.basis_into(u, &mut out);
        Ok(out)
    }
}

/// Efficacy parameters `θ = (θ₀, θ₁ᵀ)ᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    /// Log rate ratio at full efficacy.
    pub theta0: f64,
    /// Waning parameters.
    pub theta1: Vec<f64>,
}

impl Theta {
    pub fn new(theta0: f64, theta1: Vec<f64>) -> Self {
        Self { theta0, theta1 }
    }

    pub fn zeros(dim_theta1: usize) -> Self {
        Self {
            theta0: 0.0,
            theta1: vec![0.0; dim_theta1],
        }
    }

    /// Total dimension `1 + dim θ₁`.
    pub fn dim(&self) -> usize {
        1 + self.theta1.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.theta0);
        v.extend_from_slice(&self.theta1);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            theta0: v[0],
            theta1: v[1..].to_vec(),
        }
    }
}

pub fn g_value(spec: &WaningModelSpec, theta1: &[f64], u: f64) -> Result<f64, ModelError> {
    spec.g_value(theta1, u)
}

pub fn g_grad(spec: &WaningModelSpec, theta1: &[f64], u: f64) -> Result<Vec<f64>, ModelError> {
    spec.g_grad(theta1, u)
}

/// Log of the blinded vaccine:placebo rate ratio at `tau` weeks after the
/// first dose, `θ₀ + g(τ − ℓ; θ₁)`. Only defined for `tau >= lag`.
pub fn log_rate_ratio(theta: &Theta, spec: &WaningModelSpec, lag: f64, tau: f64) -> Result<f64, ModelError> {
    if !(tau >= lag) {
        return Err(ModelError::TauBeforeLag { tau, lag });
    }
    Ok(theta.theta0 + spec.g_value(&theta.theta1, tau - lag)?)
}

/// `VE(τ) = 1 − exp{θ₀ + g(τ − ℓ; θ₁)}`.
pub fn ve_from_theta(theta: &Theta, spec: &WaningModelSpec, lag: f64, tau: f64) -> Result<f64, ModelError> {
    Ok(1.0 - log_rate_ratio(theta, spec, lag, tau)?.exp())
}
