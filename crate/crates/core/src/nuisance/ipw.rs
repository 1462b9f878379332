//! Probability-of-observation functions `h` for a generic assignment law.
//!
//! The stabilized weights are ratios `h(· | x̃) / h(· | X)`; evaluating the
//! `h` functions directly, without cancelling common factors, gives an
//! independent path to the same numbers.

use crate::model::{Arm, Gamma};

use super::NuisanceFit;

/// Law of entry, unblinding and crossover agreement given covariates.
pub trait AssignmentLaw {
    fn p_assign(&self) -> f64;
    /// Density (or mass) of entry time `e` given `x`.
    fn entry_density(&self, e: f64, x: &[f64]) -> f64;
    /// `P(R̃ ≥ r | x, a)`.
    fn unblinding_survival(&self, r: f64, x: &[f64], arm: Arm) -> f64;
    /// Density (or mass) of unblinding by `cause` at `r`.
    fn unblinding_density(&self, cause: Gamma, r: f64, x: &[f64], arm: Arm) -> f64;
    /// `p_Ψ(x, Γ)`.
    fn agreement_prob(&self, x: &[f64], gamma: Gamma) -> f64;

    fn arm_prob(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Vaccine => self.p_assign(),
            Arm::Placebo => 1.0 - self.p_assign(),
        }
    }
}

/// `h_a(t, e | x)`: probability of being randomised to `arm`, entering at
/// `e` and still blinded at `t`.
pub fn h_blinded<L: AssignmentLaw + ?Sized>(law: &L, arm: Arm, t: f64, e: f64, x: &[f64]) -> f64 {
    law.arm_prob(arm) * law.entry_density(e, x) * law.unblinding_survival(t, x, arm)
}

/// `h_{a1}(e, r | x)`: probability of being randomised to `arm`, entering at
/// `e`, unblinded by `cause` at `r` and, for placebo, crossing over.
pub fn h_unblinded<L: AssignmentLaw + ?Sized>(law: &L, arm: Arm, e: f64, r: f64, cause: Gamma, x: &[f64]) -> f64 {
    let base = law.arm_prob(arm) * law.entry_density(e, x) * law.unblinding_density(cause, r, x, arm);
    match arm {
        Arm::Vaccine => base,
        Arm::Placebo => base * law.agreement_prob(x, cause),
    }
}

/// The fitted law: Breslow increments serve as the entry and unblinding
/// masses, left limits of the cumulative hazards as survival.
impl AssignmentLaw for NuisanceFit {
    fn p_assign(&self) -> f64 {
        self.timeline.p_assign
    }

    fn entry_density(&self, e: f64, x: &[f64]) -> f64 {
        let rr = self.entry_lp(x).exp();
        let base = &self.cox_entry;
        base.baseline_cumhaz.increment_at(e) * rr * (-base.cumhaz_before(e) * rr).exp()
    }

    fn unblinding_survival(&self, r: f64, x: &[f64], arm: Arm) -> f64 {
        self.survival_kr_before(r, x, arm)
    }

    fn unblinding_density(&self, cause: Gamma, r: f64, x: &[f64], arm: Arm) -> f64 {
        let (fit, window) = match cause {
            Gamma::Requested => (&self.cox_r1, (self.timeline.t_pfizer, self.timeline.t_pdcv_start)),
            Gamma::Pdcv => (&self.cox_r2, (self.timeline.t_pdcv_start, self.timeline.t_pdcv_end)),
            Gamma::Infection => return 0.0,
        };
        if !(window.0 <= r && r < window.1) {
            return 0.0;
        }
        let rr = self.unblinding_lp(cause, x, arm).exp();
        fit.baseline_cumhaz.increment_at(r) * rr * self.survival_kr_before(r, x, arm)
    }

    fn agreement_prob(&self, x: &[f64], gamma: Gamma) -> f64 {
        NuisanceFit::agreement_prob(self, x, gamma)
    }
}
