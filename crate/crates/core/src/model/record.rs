use std::fmt;

use serde::{Deserialize, Serialize};

use super::TrialTimeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Placebo,
    Vaccine,
}

impl Arm {
    pub fn code(self) -> u8 {
        match self {
            Arm::Placebo => 0,
            Arm::Vaccine => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Arm::Placebo),
            1 => Some(Arm::Vaccine),
            _ => None,
        }
    }

    pub fn indicator(self) -> f64 {
        f64::from(self.code())
    }
}

/// How the participant's blinded follow-up ended (the Γ coding 0/1/2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// Γ = 0: infected while blinded, so R = U.
    Infection,
    /// Γ = 1: requested unblinding in [T_P, T_U).
    Requested,
    /// Γ = 2: unblinded at a PDCV in [T_U, T_C).
    Pdcv,
}

impl Gamma {
    pub fn code(self) -> u8 {
        match self {
            Gamma::Infection => 0,
            Gamma::Requested => 1,
            Gamma::Pdcv => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Gamma::Infection),
            1 => Some(Gamma::Requested),
            2 => Some(Gamma::Pdcv),
            _ => None,
        }
    }

    pub fn is_unblinded(self) -> bool {
        self != Gamma::Infection
    }
}

/// Observed data `{E, X, A, U, Δ, R, Γ, Ψ}` on one participant; times in
/// calendar weeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub entry: f64,
    pub covariates: Vec<f64>,
    pub arm: Arm,
    /// Infection time U; for uninfected participants any value beyond the
    /// analysis time.
    pub infect_time: f64,
    pub infected: bool,
    pub r_time: f64,
    pub gamma: Gamma,
    /// Crossed over to vaccine after unblinding. Only meaningful for placebo
    /// participants with Γ ≥ 1.
    pub psi: bool,
    /// False when Ψ was missing at ingestion.
    pub psi_observed: bool,
}

impl ParticipantRecord {
    /// Placebo participant unblinded and vaccinated.
    pub fn crossed_over(&self) -> bool {
        self.arm == Arm::Placebo && self.gamma.is_unblinded() && self.psi
    }
}

/// A single failed record invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite(&'static str),
    EntryOutOfRange {
        entry: f64,
        t_accrual: f64,
    },
    InfectionFlag {
        infect_time: f64,
        infected: bool,
        t_analysis: f64,
    },
    InfectionBeforeEntry {
        entry: f64,
        infect_time: f64,
    },
    RequestedWindow {
        r_time: f64,
    },
    RequestedAfterPdcvStart {
        r_time: f64,
        t_pdcv_start: f64,
    },
    PdcvWindow {
        r_time: f64,
    },
    InfectionExit {
        r_time: f64,
        infect_time: f64,
    },
    UnblindedAfterInfection {
        r_time: f64,
        infect_time: f64,
    },
    MissingPsi,
    CovariateDimension {
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite(field) => write!(f, "{field} must be finite"),
            Violation::EntryOutOfRange { entry, t_accrual } => {
                write!(f, "E ≤ T_A violated: requires 0 ≤ E ≤ T_A (E={entry}, T_A={t_accrual})")
            }
            Violation::InfectionFlag {
                infect_time,
                infected,
                t_analysis,
            } => write!(
                f,
                "Δ must equal I(U ≤ L) (U={infect_time}, Δ={}, L={t_analysis})",
                u8::from(*infected)
            ),
            Violation::InfectionBeforeEntry { entry, infect_time } => {
                write!(f, "E < U violated (E={entry}, U={infect_time})")
            }
            Violation::RequestedWindow { r_time } => {
                write!(f, "Γ=1 requires T_P ≤ R (R={r_time})")
            }
            Violation::RequestedAfterPdcvStart { r_time, t_pdcv_start } => {
                write!(f, "Γ=1 requires R<T_U (R={r_time}, T_U={t_pdcv_start})")
            }
            Violation::PdcvWindow { r_time } => {
                write!(f, "Γ=2 requires T_U ≤ R < T_C (R={r_time})")
            }
            Violation::InfectionExit { r_time, infect_time } => {
                write!(f, "Γ=0 requires R = U (R={r_time}, U={infect_time})")
            }
            Violation::UnblindedAfterInfection { r_time, infect_time } => {
                write!(f, "Γ≥1 requires R < U (R={r_time}, U={infect_time})")
            }
            Violation::MissingPsi => write!(f, "Ψ is required when A=0 and Γ≥1"),
            Violation::CovariateDimension { expected, found } => {
                write!(f, "expected {expected} covariates, found {found}")
            }
        }
    }
}

/// Checks every record invariant against the timeline and returns all
/// violations found.
pub fn validate_record(rec: &ParticipantRecord, tl: &TrialTimeline) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if !rec.entry.is_finite() {
        out.push(Violation::NonFinite("E"));
    }
    if rec.infect_time.is_nan() {
        out.push(Violation::NonFinite("U"));
    }
    if !rec.r_time.is_finite() {
        out.push(Violation::NonFinite("R"));
    }
    if rec.covariates.iter().any(|x| !x.is_finite()) {
        out.push(Violation::NonFinite("X"));
    }
    if !out.is_empty() {
        return Err(out);
    }

    if !(0.0..=tl.t_accrual).contains(&rec.entry) {
        out.push(Violation::EntryOutOfRange {
            entry: rec.entry,
            t_accrual: tl.t_accrual,
        });
    }
    if rec.infected != (rec.infect_time <= tl.t_analysis) {
        out.push(Violation::InfectionFlag {
            infect_time: rec.infect_time,
            infected: rec.infected,
            t_analysis: tl.t_analysis,
        });
    }
    if rec.entry >= rec.infect_time {
        out.push(Violation::InfectionBeforeEntry {
            entry: rec.entry,
            infect_time: rec.infect_time,
        });
    }
    match rec.gamma {
        Gamma::Infection => {
            if rec.r_time != rec.infect_time {
                out.push(Violation::InfectionExit {
                    r_time: rec.r_time,
                    infect_time: rec.infect_time,
                });
            }
        }
        Gamma::Requested => {
            if rec.r_time < tl.t_pfizer {
                out.push(Violation::RequestedWindow { r_time: rec.r_time });
            }
            if rec.r_time >= tl.t_pdcv_start {
                out.push(Violation::RequestedAfterPdcvStart {
                    r_time: rec.r_time,
                    t_pdcv_start: tl.t_pdcv_start,
                });
            }
        }
        Gamma::Pdcv => {
            if !(tl.t_pdcv_start <= rec.r_time && rec.r_time < tl.t_pdcv_end) {
                out.push(Violation::PdcvWindow { r_time: rec.r_time });
            }
        }
    }
    if rec.gamma.is_unblinded() {
        if rec.r_time >= rec.infect_time {
            out.push(Violation::UnblindedAfterInfection {
                r_time: rec.r_time,
                infect_time: rec.infect_time,
            });
        }
        if rec.arm == Arm::Placebo && !rec.psi_observed {
            out.push(Violation::MissingPsi);
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Validates a whole dataset: each record, plus a common covariate length.
/// Violations are returned with the zero-based record index.
pub fn validate_dataset(records: &[ParticipantRecord], tl: &TrialTimeline) -> Result<(), Vec<(usize, Violation)>> {
    let dim = records.first().map(|r| r.covariates.len()).unwrap_or(0);
    let mut out = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        if rec.covariates.len() != dim {
            out.push((
                i,
                Violation::CovariateDimension {
                    expected: dim,
                    found: rec.covariates.len(),
                },
            ));
        }
        if let Err(vs) = validate_record(rec, tl) {
            out.extend(vs.into_iter().map(|v| (i, v)));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl() -> TrialTimeline {
        TrialTimeline::default()
    }

    fn base() -> ParticipantRecord {
        ParticipantRecord {
            entry: 3.0,
            covariates: vec![1.0, 40.0],
            arm: Arm::Placebo,
            infect_time: 30.0,
            infected: true,
            r_time: 30.0,
            gamma: Gamma::Infection,
            psi: false,
            psi_observed: false,
        }
    }

    #[test]
    fn infection_exit_is_ok() {
        assert!(validate_record(&base(), &tl()).is_ok());
    }

    #[test]
    fn requested_unblinding_after_pdcv_start() {
        let rec = ParticipantRecord {
            gamma: Gamma::Requested,
            r_time: 22.0,
            infect_time: 60.0,
            infected: false,
            psi: true,
            psi_observed: true,
            ..base()
        };
        let vs = validate_record(&rec, &tl()).unwrap_err();
        assert_eq!(vs.len(), 1);
        assert!(matches!(vs[0], Violation::RequestedAfterPdcvStart { .. }));
        assert!(vs[0].to_string().contains("Γ=1 requires R<T_U"));
    }

    #[test]
    fn late_entry() {
        let rec = ParticipantRecord { entry: 13.0, ..base() };
        let vs = validate_record(&rec, &tl()).unwrap_err();
        assert!(vs.iter().any(|v| matches!(v, Violation::EntryOutOfRange { .. })));
        assert!(vs[0].to_string().contains("E ≤ T_A"));
    }

    #[test]
    fn reports_every_violation() {
        let rec = ParticipantRecord {
            entry: 13.0,
            gamma: Gamma::Pdcv,
            r_time: 40.0,
            infect_time: 35.0,
            infected: false,
            ..base()
        };
        let vs = validate_record(&rec, &tl()).unwrap_err();
        // entry, Δ flag, PDCV window, R < U, missing Ψ
        assert_eq!(vs.len(), 5, "{vs:?}");
    }

    #[test]
    fn infection_at_analysis_time_counts_as_infected() {
        let rec = ParticipantRecord {
            infect_time: 52.0,
            r_time: 52.0,
            infected: true,
            ..base()
        };
        assert!(validate_record(&rec, &tl()).is_ok());
    }

    #[test]
    fn dataset_checks_covariate_length() {
        let mut short = base();
        short.covariates.pop();
        let err = validate_dataset(&[base(), short], &tl()).unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].0, 1);
    }
}
