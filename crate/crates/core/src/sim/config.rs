use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Theta, TrialTimeline, WaningModelSpec};

use super::SimError;

/// How a placebo participant's potential infection time is compared with
/// the unblinding time when deciding whether infection precedes unblinding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonScale {
    /// `E + T₀* < R̃`.
    #[default]
    Calendar,
    /// `T₀* < R̃`, the literal reading mixing time scales.
    Patient,
}

/// Generative model for a simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub timeline: TrialTimeline,
    pub theta_true: Theta,
    pub waning: WaningModelSpec,
    pub x1_prob: f64,
    pub x2_mean: f64,
    pub x2_sd: f64,
    /// β̃₁₀..β̃₁₄: requested-unblinding log hazard intercept, placebo slopes
    /// on (X₁−½, X₂−45), vaccine slopes on the same.
    pub beta_request: [f64; 5],
    /// γ̃₀..γ̃₃: agreement logit intercept, slopes on (X₁−½, X₂−45), and Γ̃.
    pub gamma_agree: [f64; 4],
    /// δ₀..δ₂: blinded infection log hazard intercept and slopes.
    pub delta_infect: [f64; 3],
    pub frailty_var: f64,
    /// Ratio of the unblinded to the blinded vaccinee rate at τ = ℓ,
    /// `λᵘ / (λᵇ e^{θ₀})`.
    pub lambda_u_multiplier: f64,
    pub comparison: ComparisonScale,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioPreset {
    #[serde(rename = "i-a")]
    IA,
    #[serde(rename = "i-b")]
    IB,
    #[serde(rename = "ii-a")]
    IIA,
    #[serde(rename = "ii-b")]
    IIB,
    #[serde(rename = "ii-a-strong")]
    IIAStrong,
    #[serde(rename = "ii-b-strong")]
    IIBStrong,
}

impl ScenarioPreset {
    pub const ALL: [ScenarioPreset; 6] = [
        ScenarioPreset::IA,
        ScenarioPreset::IB,
        ScenarioPreset::IIA,
        ScenarioPreset::IIB,
        ScenarioPreset::IIAStrong,
        ScenarioPreset::IIBStrong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioPreset::IA => "i-a",
            ScenarioPreset::IB => "i-b",
            ScenarioPreset::IIA => "ii-a",
            ScenarioPreset::IIB => "ii-b",
            ScenarioPreset::IIAStrong => "ii-a-strong",
            ScenarioPreset::IIBStrong => "ii-b-strong",
        }
    }

    /// Scenario (a) has waning, (b) none.
    pub fn has_waning(self) -> bool {
        matches!(
            self,
            ScenarioPreset::IA | ScenarioPreset::IIA | ScenarioPreset::IIAStrong
        )
    }
}

impl fmt::Display for ScenarioPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioPreset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::InvalidConfig(format!("unknown preset `{s}`")))
    }
}

impl ScenarioConfig {
    pub fn preset(preset: ScenarioPreset) -> Self {
        use ScenarioPreset::*;
        let theta1 = if preset.has_waning() { 7f64.ln() } else { 0.0 };
        let beta_request = match preset {
            IA | IB => [0.036f64.ln(), 0.0, 0.0, 0.0, 0.0],
            _ => [0.036f64.ln(), -0.8, -0.08, 0.8, 0.08],
        };
        let gamma_agree = match preset {
            IA | IB => [1.4, 0.0, 0.0, -0.1],
            IIA | IIB => [1.4, -0.8, -0.08, -0.1],
            IIAStrong | IIBStrong => [1.4, -1.0, -0.1, -0.1],
        };
        let delta_infect = match preset {
            IIAStrong | IIBStrong => [0.0006f64.ln(), 0.7, 0.07],
            _ => [0.0006f64.ln(), 0.4, 0.04],
        };
        Self {
            n: 30_000,
            timeline: TrialTimeline::default(),
            theta_true: Theta::new(0.05f64.ln(), vec![theta1]),
            waning: WaningModelSpec::single_knot(20.0),
            x1_prob: 0.5,
            x2_mean: 45.0,
            x2_sd: 10.0,
            beta_request,
            gamma_agree,
            delta_infect,
            frailty_var: 0.04,
            lambda_u_multiplier: 1.25,
            comparison: ComparisonScale::Calendar,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        self.timeline
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.waning
            .validate(Some(self.timeline.t_analysis))
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if !self.waning.is_piecewise() {
            return Err(SimError::UnsupportedWaning);
        }
        if self.theta_true.theta1.len() != self.waning.dim_theta1() {
            return bad("theta_true.theta1 does not match the waning model");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(0.0 < self.x1_prob && self.x1_prob < 1.0) {
            return bad("x1_prob must lie in (0,1)");
        }
        if !(self.x2_sd >= 0.0 && self.frailty_var >= 0.0) {
            return bad("variances must be nonnegative");
        }
        if !(self.lambda_u_multiplier > 0.0) {
            return bad("lambda_u_multiplier must be positive");
        }
        let coefs = self
            .beta_request
            .iter()
            .chain(&self.gamma_agree)
            .chain(&self.delta_infect)
            .chain(&self.theta_true.theta1)
            .chain(std::iter::once(&self.theta_true.theta0));
        if coefs.into_iter().any(|c| !c.is_finite()) {
            return bad("coefficients must be finite");
        }
        Ok(())
    }
}

/// Partial override of a preset; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub n: Option<usize>,
    pub timeline: Option<TrialTimeline>,
    pub theta0: Option<f64>,
    pub theta1: Option<Vec<f64>>,
    pub knots: Option<Vec<f64>>,
    pub x1_prob: Option<f64>,
    pub x2_mean: Option<f64>,
    pub x2_sd: Option<f64>,
    pub beta_request: Option<[f64; 5]>,
    pub gamma_agree: Option<[f64; 4]>,
    pub delta_infect: Option<[f64; 3]>,
    pub frailty_var: Option<f64>,
    pub lambda_u_multiplier: Option<f64>,
    pub comparison: Option<ComparisonScale>,
}

impl ScenarioOverrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(
            n,
            timeline,
            x1_prob,
            x2_mean,
            x2_sd,
            beta_request,
            gamma_agree,
            delta_infect,
            frailty_var,
            lambda_u_multiplier,
            comparison
        );
        if let Some(v) = self.theta0 {
            cfg.theta_true.theta0 = v;
        }
        if let Some(v) = &self.theta1 {
            cfg.theta_true.theta1 = v.clone();
        }
        if let Some(k) = &self.knots {
            cfg.waning = WaningModelSpec::PiecewiseConstant { knots: k.clone() };
        }
    }
}
