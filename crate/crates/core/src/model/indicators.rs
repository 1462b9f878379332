//! Observed-data indicators used to represent potential outcomes.
//!
//! Entry and unblinding times are matched exactly (`E = e`, `R = r`), which
//! is the discrete reading of the `I(E = e)` and `I(R = r)` factors.

use super::{Arm, Gamma, ParticipantRecord};

/// `Y(t) = I(E < t ≤ U)`.
pub fn at_risk(rec: &ParticipantRecord, t: f64) -> bool {
    rec.entry < t && t <= rec.infect_time
}

/// `dN(t) = I(U = t, Δ = 1)`.
pub fn infection_at(rec: &ParticipantRecord, t: f64) -> bool {
    rec.infected && rec.infect_time == t
}

/// `I_a(t, e)`: randomised to `arm`, entered at `e`, neither infected nor
/// unblinded before `t`.
pub fn blinded_indicator(rec: &ParticipantRecord, arm: Arm, t: f64, e: f64) -> bool {
    rec.arm == arm && rec.entry == e && rec.r_time >= t
}

/// `I_{a1}(t, e, r)`: randomised to `arm`, entered at `e`, unblinded at `r`;
/// placebo participants must also have crossed over.
pub fn unblinded_indicator(rec: &ParticipantRecord, arm: Arm, e: f64, r: f64) -> bool {
    if rec.arm != arm || rec.entry != e || rec.r_time != r {
        return false;
    }
    match rec.gamma {
        Gamma::Infection => false,
        Gamma::Requested | Gamma::Pdcv => arm == Arm::Vaccine || rec.psi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(arm: Arm, gamma: Gamma, psi: bool) -> ParticipantRecord {
        ParticipantRecord {
            entry: 1.0,
            covariates: vec![],
            arm,
            infect_time: 40.0,
            infected: true,
            r_time: if gamma == Gamma::Infection { 40.0 } else { 25.0 },
            gamma,
            psi,
            psi_observed: true,
        }
    }

    #[test]
    fn at_risk_is_left_open_right_closed() {
        let r = rec(Arm::Placebo, Gamma::Infection, false);
        assert!(!at_risk(&r, 1.0));
        assert!(at_risk(&r, 40.0));
        assert!(!at_risk(&r, 40.5));
        assert!(infection_at(&r, 40.0));
    }

    #[test]
    fn decliners_are_not_represented_after_unblinding() {
        let declined = rec(Arm::Placebo, Gamma::Pdcv, false);
        assert!(!unblinded_indicator(&declined, Arm::Placebo, 1.0, 25.0));
        let crossed = rec(Arm::Placebo, Gamma::Pdcv, true);
        assert!(unblinded_indicator(&crossed, Arm::Placebo, 1.0, 25.0));
        let vaccinee = rec(Arm::Vaccine, Gamma::Requested, false);
        assert!(unblinded_indicator(&vaccinee, Arm::Vaccine, 1.0, 25.0));
        assert!(blinded_indicator(&crossed, Arm::Placebo, 25.0, 1.0));
        assert!(!blinded_indicator(&crossed, Arm::Placebo, 25.5, 1.0));
    }
}
