use serde::{Deserialize, Serialize};

use crate::model::{Arm, Gamma, ParticipantRecord, TrialTimeline};

use super::cox::{fit_cox, CoxFit, CoxRow, Window};
use super::design::DesignSpec;
use super::logistic::{fit_logistic, LogisticFit};
use super::newton::NewtonOptions;
use super::step::StepFunction;
use super::NuisanceError;

pub const NUISANCE_FORMAT_VERSION: u32 = 1;

/// Choice of the reference covariate value x̃ in the stabilized weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ReferenceCovariates {
    /// Mean over all participants.
    #[default]
    SampleMean,
    /// Mean over placebo participants.
    PlaceboMean,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NuisanceOptions {
    pub newton: NewtonOptions,
    pub reference: ReferenceCovariates,
}

/// Cumulative baseline hazards of the two unblinding causes, arranged so that
/// `K_R(t | x, a) = exp{−H₁(t)·e^{φ₁(x,a)} − H₂(t)·e^{φ₂(x,a)}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrCumhaz {
    pub cause1: StepFunction,
    pub cause2: StepFunction,
    pub t_pfizer: f64,
    pub t_pdcv_start: f64,
    pub t_pdcv_end: f64,
}

impl KrCumhaz {
    /// Exponents for the right-continuous `K_R(t)`; `None` once `t ≥ T_C`
    /// where `K_R = 0`.
    pub fn exponents(&self, t: f64) -> Option<(f64, f64)> {
        if t < self.t_pfizer {
            Some((0.0, 0.0))
        } else if t < self.t_pdcv_start {
            Some((self.cause1.eval(t), 0.0))
        } else if t < self.t_pdcv_end {
            Some((self.cause1.eval_before(self.t_pdcv_start), self.cause2.eval(t)))
        } else {
            None
        }
    }

    /// Exponents for the left limit `K_R(t−) = P(R̃ ≥ t)`; `None` for
    /// `t > T_C`.
    pub fn exponents_before(&self, t: f64) -> Option<(f64, f64)> {
        if t <= self.t_pfizer {
            Some((0.0, 0.0))
        } else if t <= self.t_pdcv_start {
            Some((self.cause1.eval_before(t), 0.0))
        } else if t <= self.t_pdcv_end {
            Some((self.cause1.eval_before(self.t_pdcv_start), self.cause2.eval_before(t)))
        } else {
            None
        }
    }
}

/// Fitted nuisance models: cause-specific unblinding hazards, entry-time
/// hazard and the crossover-agreement model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub format_version: u32,
    pub timeline: TrialTimeline,
    /// Requested unblinding, events on `[T_P, T_U)`.
    pub cox_r1: CoxFit,
    /// PDCV unblinding, events on `[T_U, T_C)`.
    pub cox_r2: CoxFit,
    pub cox_entry: CoxFit,
    /// `p_Ψ(X, Γ)` among unblinded placebo participants.
    pub logit_psi: LogisticFit,
    pub x_ref: Vec<f64>,
}

fn mean_covariates<'a>(records: impl Iterator<Item = &'a ParticipantRecord>, k: usize) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    let mut n = 0usize;
    for r in records {
        for (s, x) in sum.iter_mut().zip(&r.covariates) {
            *s += x;
        }
        n += 1;
    }
    sum.iter().map(|s| s / n.max(1) as f64).collect()
}

impl NuisanceFit {
    pub fn fit(
        records: &[ParticipantRecord],
        tl: &TrialTimeline,
        opts: &NuisanceOptions,
    ) -> Result<Self, NuisanceError> {
        if records.is_empty() {
            return Err(NuisanceError::NoRows);
        }
        let k = records[0].covariates.len();
        let tag = |model: &'static str| move |e: NuisanceError| e.in_model(model);

        let d_r1 = DesignSpec::covariates_arm_interaction(k);
        let rows_r = |cause: Gamma, design: &DesignSpec| -> Vec<CoxRow> {
            records
                .iter()
                .map(|r| CoxRow {
                    time: r.r_time,
                    event: r.gamma == cause,
                    covariates: design.row(&r.covariates, r.arm, r.gamma),
                })
                .collect()
        };
        let mut cox_r1 = fit_cox(
            &rows_r(Gamma::Requested, &d_r1),
            Window::new(tl.t_pfizer, tl.t_pdcv_start),
            &opts.newton,
        )
        .map_err(tag("requested-unblinding Cox"))?;
        cox_r1.design = d_r1;

        let d_r2 = DesignSpec::covariates(k);
        let mut cox_r2 = fit_cox(
            &rows_r(Gamma::Pdcv, &d_r2),
            Window::new(tl.t_pdcv_start, tl.t_pdcv_end),
            &opts.newton,
        )
        .map_err(tag("PDCV-unblinding Cox"))?;
        cox_r2.design = d_r2;

        let entry_rows: Vec<CoxRow> = records
            .iter()
            .map(|r| CoxRow {
                time: r.entry,
                event: true,
                covariates: r.covariates.clone(),
            })
            .collect();
        let cox_entry = fit_cox(&entry_rows, Window::unbounded(), &opts.newton).map_err(tag("entry-time Cox"))?;

        let d_psi = DesignSpec::stratified_by_gamma(k);
        let (mut y, mut rows) = (Vec::new(), Vec::new());
        for r in records
            .iter()
            .filter(|r| r.arm == Arm::Placebo && r.gamma.is_unblinded() && r.psi_observed)
        {
            y.push(r.psi);
            rows.push(d_psi.row(&r.covariates, r.arm, r.gamma));
        }
        let logit_psi = fit_logistic(&y, &rows, d_psi, &opts.newton).map_err(tag("agreement logistic"))?;

        let x_ref = match &opts.reference {
            ReferenceCovariates::SampleMean => mean_covariates(records.iter(), k),
            ReferenceCovariates::PlaceboMean => mean_covariates(records.iter().filter(|r| r.arm == Arm::Placebo), k),
            ReferenceCovariates::Fixed(x) => {
                if x.len() != k {
                    return Err(NuisanceError::DimensionMismatch {
                        expected: k,
                        found: x.len(),
                    });
                }
                x.clone()
            }
        };
        Ok(Self {
            format_version: NUISANCE_FORMAT_VERSION,
            timeline: *tl,
            cox_r1,
            cox_r2,
            cox_entry,
            logit_psi,
            x_ref,
        })
    }

    /// The same fit with every regression coefficient set to zero; baselines
    /// and x̃ are kept.
    pub fn with_zero_coefficients(&self) -> Self {
        Self {
            cox_r1: self.cox_r1.zero_coefficients(),
            cox_r2: self.cox_r2.zero_coefficients(),
            cox_entry: self.cox_entry.zero_coefficients(),
            logit_psi: self.logit_psi.zero_coefficients(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("nuisance fit serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NuisanceError> {
        let fit: Self = serde_json::from_str(s).map_err(|e| NuisanceError::Format(e.to_string()))?;
        if fit.format_version != NUISANCE_FORMAT_VERSION {
            return Err(NuisanceError::Format(format!(
                "unsupported format_version {} (expected {NUISANCE_FORMAT_VERSION})",
                fit.format_version
            )));
        }
        Ok(fit)
    }

    pub fn kr_cumhaz(&self) -> KrCumhaz {
        KrCumhaz {
            cause1: self.cox_r1.baseline_cumhaz.clone(),
            cause2: self.cox_r2.baseline_cumhaz.clone(),
            t_pfizer: self.timeline.t_pfizer,
            t_pdcv_start: self.timeline.t_pdcv_start,
            t_pdcv_end: self.timeline.t_pdcv_end,
        }
    }

    /// `φ_j(x, a)` for unblinding cause `j`.
    pub fn unblinding_lp(&self, cause: Gamma, x: &[f64], arm: Arm) -> f64 {
        let fit = match cause {
            Gamma::Requested => &self.cox_r1,
            Gamma::Pdcv => &self.cox_r2,
            Gamma::Infection => panic!("infection is not an unblinding cause"),
        };
        fit.linear_predictor(&fit.design.row(x, arm, cause))
    }

    pub fn entry_lp(&self, x: &[f64]) -> f64 {
        self.cox_entry.linear_predictor(x)
    }

    pub fn agreement_prob(&self, x: &[f64], gamma: Gamma) -> f64 {
        self.logit_psi.prob(&self.logit_psi.design.row(x, Arm::Placebo, gamma))
    }

    fn kr_exponent(&self, h: (f64, f64), x: &[f64], arm: Arm) -> f64 {
        h.0 * self.unblinding_lp(Gamma::Requested, x, arm).exp() + h.1 * self.unblinding_lp(Gamma::Pdcv, x, arm).exp()
    }

    /// `K_R(t | x, a)` (right-continuous).
    pub fn survival_kr(&self, t: f64, x: &[f64], arm: Arm) -> f64 {
        match self.kr_cumhaz().exponents(t) {
            Some(h) => (-self.kr_exponent(h, x, arm)).exp(),
            None => 0.0,
        }
    }

    /// `K_R(t− | x, a)`.
    pub fn survival_kr_before(&self, t: f64, x: &[f64], arm: Arm) -> f64 {
        match self.kr_cumhaz().exponents_before(t) {
            Some(h) => (-self.kr_exponent(h, x, arm)).exp(),
            None => 0.0,
        }
    }

    /// `f_{E|X}(E | x̃) / f_{E|X}(E | X)`; the baseline hazard increment at
    /// `E` cancels.
    pub fn entry_ratio(&self, entry: f64, x: &[f64]) -> f64 {
        let lp_ref = self.entry_lp(&self.x_ref);
        let lp = self.entry_lp(x);
        let h = self.cox_entry.cumhaz_before(entry);
        (lp_ref - lp).exp() * (-h * (lp_ref.exp() - lp.exp())).exp()
    }

    pub fn blinded_weight(&self, rec: &ParticipantRecord) -> BlindedWeight {
        let x = &rec.covariates;
        let e1 = |x: &[f64]| self.unblinding_lp(Gamma::Requested, x, rec.arm).exp();
        let e2 = |x: &[f64]| self.unblinding_lp(Gamma::Pdcv, x, rec.arm).exp();
        let (d1, d2) = (e1(x), e2(x));
        BlindedWeight {
            scale: self.entry_ratio(rec.entry, x),
            c1: e1(&self.x_ref) - d1,
            c2: e2(&self.x_ref) - d2,
            d1,
            d2,
        }
    }
}

/// Blinded-process stabilized weight of one participant as a function of
/// calendar time: `scale · exp{−c₁H₁(t−) − c₂H₂(t−)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlindedWeight {
    /// Entry-density ratio.
    pub scale: f64,
    pub c1: f64,
    pub c2: f64,
    /// `e^{φ_j(X, A)}`, kept for the positivity check.
    pub d1: f64,
    pub d2: f64,
}

impl BlindedWeight {
    pub const UNIT: BlindedWeight = BlindedWeight {
        scale: 1.0,
        c1: 0.0,
        c2: 0.0,
        d1: 0.0,
        d2: 0.0,
    };

    pub fn at(&self, h: (f64, f64)) -> f64 {
        self.scale * (-(self.c1 * h.0 + self.c2 * h.1)).exp()
    }

    /// `K_R(t−|X,A) > 0`.
    pub fn denominator_positive(&self, h: (f64, f64)) -> bool {
        (-(self.d1 * h.0 + self.d2 * h.1)).exp() > 0.0
    }
}

/// `[f_E(E|x̃)/f_E(E|X)]·[K_R(t−|x̃,A)/K_R(t−|X,A)]`.
pub fn stabilized_weight_blinded(fit: &NuisanceFit, rec: &ParticipantRecord, t: f64) -> Result<f64, NuisanceError> {
    let h = fit
        .kr_cumhaz()
        .exponents_before(t)
        .ok_or_else(|| NuisanceError::Positivity(format!("K_R(t−) = 0 for t={t} > T_C")))?;
    let w = fit.blinded_weight(rec);
    if !w.denominator_positive(h) {
        return Err(NuisanceError::Positivity(format!(
            "K_R(t−|X,A) underflows to 0 at t={t}"
        )));
    }
    Ok(w.at(h))
}

/// Unblinded-process weight: entry ratio times the ratio of the cause-Γ
/// unblinding densities at `R`, times the agreement-probability ratio for
/// placebo participants.
pub fn stabilized_weight_unblinded(fit: &NuisanceFit, rec: &ParticipantRecord) -> Result<f64, NuisanceError> {
    unblinded_weight(fit, &fit.kr_cumhaz(), rec)
}

fn unblinded_weight(fit: &NuisanceFit, kr: &KrCumhaz, rec: &ParticipantRecord) -> Result<f64, NuisanceError> {
    if !rec.gamma.is_unblinded() {
        return Err(NuisanceError::Positivity(
            "unblinded weight requested for a participant with Γ=0".into(),
        ));
    }
    let x = &rec.covariates;
    let x_ref = &fit.x_ref;
    let h = kr
        .exponents_before(rec.r_time)
        .ok_or_else(|| NuisanceError::Positivity(format!("unblinding time R={} is after T_C", rec.r_time)))?;
    let w_b = fit.blinded_weight(rec);
    if !w_b.denominator_positive(h) {
        return Err(NuisanceError::Positivity(format!(
            "K_R(R−|X,A) underflows to 0 at R={}",
            rec.r_time
        )));
    }
    let lp_ref = fit.unblinding_lp(rec.gamma, x_ref, rec.arm);
    let lp = fit.unblinding_lp(rec.gamma, x, rec.arm);
    let mut w = w_b.at(h) * (lp_ref - lp).exp();
    if rec.arm == Arm::Placebo {
        let p = fit.agreement_prob(x, rec.gamma);
        if p <= 0.0 {
            return Err(NuisanceError::Positivity(format!(
                "p_Ψ(X,Γ) = 0 for Γ={}",
                rec.gamma.code()
            )));
        }
        w *= fit.agreement_prob(x_ref, rec.gamma) / p;
    }
    Ok(w)
}

/// Per-participant stabilized weights for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizedWeights {
    pub kr: KrCumhaz,
    pub blinded: Vec<BlindedWeight>,
    /// Present when the participant contributes to the unblinded process
    /// (Γ ≥ 1, and Ψ = 1 for placebo).
    pub unblinded: Vec<Option<f64>>,
}

impl StabilizedWeights {
    pub fn compute(fit: &NuisanceFit, records: &[ParticipantRecord]) -> Result<Self, NuisanceError> {
        let kr = fit.kr_cumhaz();
        let blinded = records.iter().map(|r| fit.blinded_weight(r)).collect();
        let unblinded = records
            .iter()
            .map(|r| {
                let contributes = r.gamma.is_unblinded() && (r.arm == Arm::Vaccine || r.psi);
                contributes.then(|| unblinded_weight(fit, &kr, r)).transpose()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { kr, blinded, unblinded })
    }

    /// Blinded weight of participant `i` at calendar time `t`.
    pub fn blinded_at(&self, i: usize, t: f64) -> Result<f64, NuisanceError> {
        let h = self
            .kr
            .exponents_before(t)
            .ok_or_else(|| NuisanceError::Positivity(format!("K_R(t−) = 0 for t={t} > T_C")))?;
        let w = &self.blinded[i];
        if !w.denominator_positive(h) {
            return Err(NuisanceError::Positivity(format!(
                "participant {i}: K_R(t−|X,A) underflows to 0 at t={t}"
            )));
        }
        Ok(w.at(h))
    }
}
