use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::model::{ModelError, Theta, WaningModelSpec};

/// VE at one time since first dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VeEstimate {
    pub label: String,
    pub tau: f64,
    pub log_rate_ratio: f64,
    pub log_rate_ratio_se: f64,
    pub ve: f64,
    /// Delta-method standard error of VE.
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// One-sided Wald test of `θ₁ⱼ ≤ 0` against `θ₁ⱼ > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    /// Index into θ₁.
    pub coordinate: usize,
    pub estimate: f64,
    pub se: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Labelled times since first dose, one per segment of the waning function
/// (labels give `τ − ℓ`): `ℓ + v₁` for `τ − ℓ ≤ v₁`, `ℓ + v_{j+1}` inside later bounded
/// segments and `ℓ + v_k + 1` beyond the last knot. For linear waning,
/// `ℓ` plus 0, 12, 24 and 36 weeks.
pub fn default_taus(spec: &WaningModelSpec, lag: f64) -> Vec<(String, f64)> {
    match spec {
        WaningModelSpec::Linear => [0.0, 12.0, 24.0, 36.0]
            .iter()
            .map(|u| (format!("VE@{u}"), lag + u))
            .collect(),
        WaningModelSpec::PiecewiseConstant { knots } => {
            let mut out = vec![(format!("VE<={}", knots[0]), lag + knots[0])];
            for w in knots.windows(2) {
                out.push((format!("VE({},{}]", w[0], w[1]), lag + w[1]));
            }
            let last = knots[knots.len() - 1];
            out.push((format!("VE>{last}"), lag + last + 1.0));
            out
        }
    }
}

/// VE point estimates, delta-method SEs and 95% intervals. Intervals are
/// Wald intervals for the log rate ratio mapped through `1 − exp(·)`.
pub fn report_ve(
    theta: &Theta,
    cov: &DMatrix<f64>,
    spec: &WaningModelSpec,
    lag: f64,
    taus: &[(String, f64)],
) -> Result<Vec<VeEstimate>, ModelError> {
    let z = standard_normal().inverse_cdf(0.975);
    let th = DVector::from_vec(theta.to_vec());
    taus.iter()
        .map(|(label, tau)| {
            if !(*tau >= lag) {
                return Err(ModelError::TauBeforeLag { tau: *tau, lag });
            }
            let mut c = DVector::zeros(th.len());
            c[0] = 1.0;
            spec.basis_into(tau - lag, c.as_mut_slice()[1..].as_mut());
            let eta = c.dot(&th);
            let var = (c.transpose() * cov * &c)[(0, 0)].max(0.0);
            let sd = var.sqrt();
            Ok(VeEstimate {
                label: label.clone(),
                tau: *tau,
                log_rate_ratio: eta,
                log_rate_ratio_se: sd,
                ve: 1.0 - eta.exp(),
                se: eta.exp() * sd,
                ci_lower: 1.0 - (eta + z * sd).exp(),
                ci_upper: 1.0 - (eta - z * sd).exp(),
            })
        })
        .collect()
}

pub fn wald_waning(theta: &Theta, cov: &DMatrix<f64>, alpha: f64) -> Vec<WaldTest> {
    let normal = standard_normal();
    theta
        .theta1
        .iter()
        .enumerate()
        .map(|(j, &est)| {
            let se = cov[(j + 1, j + 1)].max(0.0).sqrt();
            let statistic = est / se;
            let p_value = 1.0 - normal.cdf(statistic);
            WaldTest {
                coordinate: j,
                estimate: est,
                se,
                statistic,
                p_value,
                alpha,
                reject: p_value < alpha,
            }
        })
        .collect()
}
