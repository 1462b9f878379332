//! Potential-outcome infection hazards and piecewise-constant inverse
//! transform sampling.

use serde::{Deserialize, Serialize};

use crate::model::Arm;

use super::{ScenarioConfig, SimError};

/// Constant hazard `rate` on `[start, end)`; `end` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
}

/// `inf{t : Λ(t) ≥ −log u}` for contiguous segments; `+∞` when the target
/// exceeds the total bounded hazard.
pub fn invert_piecewise_hazard(segments: &[Segment], u: f64) -> f64 {
    let mut target = -u.ln();
    for s in segments {
        let width = s.end - s.start;
        let mass = s.rate * width;
        if target <= mass {
            return if s.rate > 0.0 {
                s.start + target / s.rate
            } else {
                s.start
            };
        }
        target -= mass;
    }
    f64::INFINITY
}

/// `Λ(t)` from the segments.
pub fn cumulative_hazard(segments: &[Segment], t: f64) -> f64 {
    segments
        .iter()
        .take_while(|s| s.start < t)
        .map(|s| s.rate * (t.min(s.end) - s.start))
        .sum()
}

/// Subject-level infection rates: blinded `λᵇ`, during the crossover lag
/// `λᵘ_ℓ`, and after unblinding `λᵘ`. `λᵘ` is the rate of an unblinded,
/// fully protected vaccinee at τ = ℓ, so it carries the `e^{θ₀}` factor:
/// `λᵘ = m·λᵇ·e^{θ₀}` with `m` the configured multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectRates {
    pub lambda_b: f64,
    pub lambda_u_lag: f64,
    pub lambda_u: f64,
}

impl SubjectRates {
    pub fn new(cfg: &ScenarioConfig, lambda_b: f64) -> Self {
        Self {
            lambda_b,
            lambda_u_lag: lambda_b,
            lambda_u: cfg.lambda_u_multiplier * lambda_b * cfg.theta_true.theta0.exp(),
        }
    }
}

/// Infection hazard at calendar time `t` of a participant entering at `e`
/// and unblinded at `r`, had they been assigned `arm`. Pre-lag vaccine
/// effects (ζ) are zero.
pub fn potential_hazard(
    cfg: &ScenarioConfig,
    rates: &SubjectRates,
    arm: Arm,
    e: f64,
    r: f64,
    t: f64,
) -> Result<f64, SimError> {
    if !(t > e) {
        return Err(SimError::HazardBeforeEntry { t, e });
    }
    let lag = cfg.timeline.lag;
    let g = |u: f64| {
        cfg.waning
            .g_value(&cfg.theta_true.theta1, u)
            .expect("validated dimension")
    };
    Ok(match arm {
        Arm::Placebo => {
            if t < r {
                rates.lambda_b
            } else if t < r + lag {
                rates.lambda_u_lag
            } else {
                rates.lambda_u * g(t - r - lag).exp()
            }
        }
        Arm::Vaccine => {
            if t < r {
                if t < e + lag {
                    rates.lambda_b
                } else {
                    rates.lambda_b * (cfg.theta_true.theta0 + g(t - e - lag)).exp()
                }
            } else {
                rates.lambda_u * g(t - e - lag).exp()
            }
        }
    })
}

/// Calendar-time segments of the potential hazard from entry `e` onwards.
/// Requires piecewise-constant waning so the hazard is constant between
/// breakpoints.
pub fn potential_segments(
    cfg: &ScenarioConfig,
    rates: &SubjectRates,
    arm: Arm,
    e: f64,
    r: f64,
) -> Result<Vec<Segment>, SimError> {
    if !cfg.waning.is_piecewise() {
        return Err(SimError::UnsupportedWaning);
    }
    let lag = cfg.timeline.lag;
    let mut cuts = vec![e, e + lag, r, r + lag];
    for v in cfg.waning.knots() {
        cuts.push(e + lag + v);
        cuts.push(r + lag + v);
    }
    cuts.retain(|c| c.is_finite() && *c >= e);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut segments = Vec::with_capacity(cuts.len());
    for (k, &start) in cuts.iter().enumerate() {
        let end = cuts.get(k + 1).copied().unwrap_or(f64::INFINITY);
        let probe = if end.is_finite() {
            0.5 * (start + end)
        } else {
            start + 1.0
        };
        segments.push(Segment {
            start,
            end,
            rate: potential_hazard(cfg, rates, arm, e, r, probe)?,
        });
    }
    Ok(segments)
}

/// Patient-scale potential infection time `T*(e, r)` from a uniform draw.
pub fn potential_time(
    cfg: &ScenarioConfig,
    rates: &SubjectRates,
    arm: Arm,
    e: f64,
    r: f64,
    u: f64,
) -> Result<f64, SimError> {
    Ok(invert_piecewise_hazard(&potential_segments(cfg, rates, arm, e, r)?, u) - e)
}
