//! Weighted counting and at-risk processes.
//!
//! Each participant contributes at most one blinded and one unblinded
//! exposure: a calendar-time interval during which it is at risk, a weight
//! function, the origin of its waning clock and possibly an observed jump.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{Arm, Gamma, ParticipantRecord, Theta, TrialTimeline, WaningModelSpec};
use crate::nuisance::{BlindedWeight, KrCumhaz, StabilizedWeights};

use super::EstimationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    Blinded,
    Unblinded,
}

impl Process {
    pub const ALL: [Process; 2] = [Process::Blinded, Process::Unblinded];

    pub fn index(self) -> usize {
        match self {
            Process::Blinded => 0,
            Process::Unblinded => 1,
        }
    }
}

/// Calendar-time interval with independently open or closed ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl Interval {
    pub fn contains(&self, t: f64) -> bool {
        let above = if self.lo_closed { t >= self.lo } else { t > self.lo };
        let below = if self.hi_closed { t <= self.hi } else { t < self.hi };
        above && below
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    /// Index range of the ascending `grid` points inside the interval.
    pub fn grid_range(&self, grid: &[f64]) -> std::ops::Range<usize> {
        let a = if self.lo_closed {
            grid.partition_point(|&s| s < self.lo)
        } else {
            grid.partition_point(|&s| s <= self.lo)
        };
        let b = if self.hi_closed {
            grid.partition_point(|&s| s <= self.hi)
        } else {
            grid.partition_point(|&s| s < self.hi)
        };
        a..b.max(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExposureWeight {
    Constant(f64),
    /// Evaluated through the unblinding cumulative hazards at `t−`.
    Blinded(BlindedWeight),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exposure {
    pub participant: usize,
    pub process: Process,
    pub arm: Arm,
    pub window: Interval,
    /// Calendar time at which the waning clock `u` starts.
    pub origin: f64,
    /// First coordinate of Z (the θ₀ indicator).
    pub theta0: bool,
    /// Whether the waning basis enters Z.
    pub waning: bool,
    pub weight: ExposureWeight,
    /// Observed infection inside the window.
    pub jump: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedProcesses {
    pub spec: WaningModelSpec,
    pub timeline: TrialTimeline,
    pub n_participants: usize,
    pub exposures: Vec<Exposure>,
    kr: Option<KrCumhaz>,
}

impl WeightedProcesses {
    pub fn dim(&self) -> usize {
        1 + self.spec.dim_theta1()
    }

    /// `Z(t)` of an exposure, written into `out`.
    pub fn z_into(&self, e: &Exposure, t: f64, out: &mut [f64]) {
        out[0] = if e.theta0 { 1.0 } else { 0.0 };
        if e.waning {
            self.spec.basis_into(t - e.origin, &mut out[1..]);
        } else {
            out[1..].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn weight_at(&self, e: &Exposure, t: f64) -> f64 {
        match e.weight {
            ExposureWeight::Constant(w) => w,
            ExposureWeight::Blinded(bw) => {
                let kr = self
                    .kr
                    .as_ref()
                    .expect("blinded weights carry their cumulative hazards");
                bw.at(kr.exponents_before(t).unwrap_or((f64::INFINITY, f64::INFINITY)))
            }
        }
    }

    pub fn exposures_of(&self, process: Process) -> impl Iterator<Item = &Exposure> {
        self.exposures.iter().filter(move |e| e.process == process)
    }

    /// Sorted distinct jump times of one process.
    pub fn jump_times(&self, process: Process) -> Vec<f64> {
        let mut t: Vec<f64> = self.exposures_of(process).filter_map(|e| e.jump).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn n_jumps(&self, process: Process) -> usize {
        self.exposures_of(process).filter(|e| e.jump.is_some()).count()
    }
}

/// Weight source for [`build_processes`].
#[derive(Debug, Clone, Copy)]
pub enum Weights<'a> {
    Unit,
    Stabilized(&'a StabilizedWeights),
}

fn blinded_window(rec: &ParticipantRecord, tl: &TrialTimeline) -> Interval {
    let (lo, lo_closed) = match rec.arm {
        Arm::Placebo => (rec.entry, false),
        Arm::Vaccine => (rec.entry + tl.lag, true),
    };
    let (hi, hi_closed) = if rec.r_time < tl.t_pdcv_end {
        (rec.r_time, true)
    } else {
        (tl.t_pdcv_end, false)
    };
    Interval {
        lo,
        lo_closed,
        hi,
        hi_closed,
    }
}

fn unblinded_window(rec: &ParticipantRecord, tl: &TrialTimeline) -> Option<(Interval, f64)> {
    if rec.gamma == Gamma::Infection {
        return None;
    }
    let hi = rec.infect_time.min(tl.t_analysis);
    match rec.arm {
        Arm::Vaccine => Some((
            Interval {
                lo: rec.r_time,
                lo_closed: false,
                hi,
                hi_closed: true,
            },
            rec.entry + tl.lag,
        )),
        Arm::Placebo if rec.psi => Some((
            Interval {
                lo: rec.r_time + tl.lag,
                lo_closed: true,
                hi,
                hi_closed: true,
            },
            rec.r_time + tl.lag,
        )),
        Arm::Placebo => None,
    }
}

/// Builds the blinded and unblinded exposures of every participant.
pub fn build_processes(
    records: &[ParticipantRecord],
    tl: &TrialTimeline,
    spec: &WaningModelSpec,
    weights: Weights<'_>,
) -> Result<WeightedProcesses, EstimationError> {
    let stabilized = match weights {
        Weights::Unit => None,
        Weights::Stabilized(w) => {
            if w.blinded.len() != records.len() || w.unblinded.len() != records.len() {
                return Err(EstimationError::InconsistentWeights(format!(
                    "{} records but {} weights",
                    records.len(),
                    w.blinded.len()
                )));
            }
            Some(w)
        }
    };
    let mut exposures = Vec::with_capacity(records.len() + records.len() / 4);
    for (i, rec) in records.iter().enumerate() {
        let jump_in = |w: &Interval| (rec.infected && w.contains(rec.infect_time)).then_some(rec.infect_time);

        let window = blinded_window(rec, tl);
        if !window.is_empty() {
            let weight = match stabilized {
                None => ExposureWeight::Constant(1.0),
                Some(sw) => {
                    let bw = sw.blinded[i];
                    let h = sw
                        .kr
                        .exponents_before(window.hi)
                        .unwrap_or((f64::INFINITY, f64::INFINITY));
                    if !bw.denominator_positive(h) || !bw.at(h).is_finite() {
                        return Err(EstimationError::Nuisance(crate::nuisance::NuisanceError::Positivity(
                            format!("participant {i}: K_R(t−|X,A) vanishes inside the blinded window"),
                        )));
                    }
                    ExposureWeight::Blinded(bw)
                }
            };
            exposures.push(Exposure {
                participant: i,
                process: Process::Blinded,
                arm: rec.arm,
                window,
                origin: rec.entry + tl.lag,
                theta0: rec.arm == Arm::Vaccine,
                waning: rec.arm == Arm::Vaccine,
                weight,
                jump: jump_in(&window),
            });
        }

        if let Some((window, origin)) = unblinded_window(rec, tl) {
            if window.is_empty() {
                continue;
            }
            let w = match stabilized {
                None => 1.0,
                Some(sw) => sw.unblinded[i].ok_or_else(|| {
                    EstimationError::InconsistentWeights(format!(
                        "participant {i} contributes to the unblinded process but has no weight"
                    ))
                })?,
            };
            exposures.push(Exposure {
                participant: i,
                process: Process::Unblinded,
                arm: rec.arm,
                window,
                origin,
                theta0: false,
                waning: true,
                weight: ExposureWeight::Constant(w),
                jump: jump_in(&window),
            });
        }
    }
    Ok(WeightedProcesses {
        spec: spec.clone(),
        timeline: *tl,
        n_participants: records.len(),
        exposures,
        kr: stabilized.map(|s| s.kr.clone()),
    })
}

/// `ΣỸ(t)`, `ΣZỸ(t)` and `ΣZZᵀỸ(t)` over one process.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSums {
    pub s0: f64,
    pub s1: DVector<f64>,
    pub s2: DMatrix<f64>,
}

fn at_risk(proc: &WeightedProcesses, process: Process, t: f64, theta: &Theta) -> RiskSums {
    let d = proc.dim();
    let th = DVector::from_vec(theta.to_vec());
    let mut z = vec![0.0; d];
    let mut out = RiskSums {
        s0: 0.0,
        s1: DVector::zeros(d),
        s2: DMatrix::zeros(d, d),
    };
    for e in proc.exposures_of(process).filter(|e| e.window.contains(t)) {
        proc.z_into(e, t, &mut z);
        let zv = DVector::from_column_slice(&z);
        let y = proc.weight_at(e, t) * zv.dot(&th).exp();
        out.s0 += y;
        out.s1 += &zv * y;
        out.s2 += &zv * zv.transpose() * y;
    }
    out
}

/// Blinded-process sums at calendar time `t` (meaningful for `t < T_C`).
pub fn at_risk_b(proc: &WeightedProcesses, t: f64, theta: &Theta) -> RiskSums {
    at_risk(proc, Process::Blinded, t, theta)
}

/// Unblinded-process sums at calendar time `t`.
pub fn at_risk_u(proc: &WeightedProcesses, t: f64, theta: &Theta) -> RiskSums {
    at_risk(proc, Process::Unblinded, t, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tl() -> TrialTimeline {
        TrialTimeline::default()
    }

    fn rec(entry: f64, arm: Arm, u: f64, r: f64, gamma: Gamma, psi: bool) -> ParticipantRecord {
        ParticipantRecord {
            entry,
            covariates: vec![],
            arm,
            infect_time: u,
            infected: u <= 52.0,
            r_time: r,
            gamma,
            psi,
            psi_observed: arm == Arm::Placebo && gamma != Gamma::Infection,
        }
    }

    fn build(records: &[ParticipantRecord]) -> WeightedProcesses {
        build_processes(records, &tl(), &WaningModelSpec::single_knot(20.0), Weights::Unit).unwrap()
    }

    fn jumps(p: &WeightedProcesses, process: Process) -> Vec<(usize, f64)> {
        p.exposures_of(process)
            .filter_map(|e| e.jump.map(|t| (e.participant, t)))
            .collect()
    }

    #[test]
    fn vaccinee_infected_during_lag_has_no_jump() {
        let p = build(&[rec(2.0, Arm::Vaccine, 7.0, 7.0, Gamma::Infection, false)]);
        assert!(jumps(&p, Process::Blinded).is_empty());
        assert!(jumps(&p, Process::Unblinded).is_empty());
    }

    #[test]
    fn declined_placebo_contributes_nothing_after_unblinding() {
        let p = build(&[rec(2.0, Arm::Placebo, 40.0, 25.0, Gamma::Pdcv, false)]);
        assert!(jumps(&p, Process::Blinded).is_empty());
        assert_eq!(p.exposures_of(Process::Unblinded).count(), 0);
    }

    #[test]
    fn crossover_infected_during_lag_has_no_jump() {
        let r = 20.0;
        let p = build(&[rec(2.0, Arm::Placebo, r + 6.0 - 0.1, r, Gamma::Requested, true)]);
        assert!(jumps(&p, Process::Unblinded).is_empty());
        assert!(jumps(&p, Process::Blinded).is_empty());
        let p = build(&[rec(2.0, Arm::Placebo, r + 6.0, r, Gamma::Requested, true)]);
        assert_eq!(jumps(&p, Process::Unblinded), vec![(0, 26.0)]);
    }

    #[test]
    fn infection_at_pdcv_close_is_unblinded_only() {
        // Blinded through T_C is impossible in the trial design, but a
        // blinded infection exactly at T_C must not count.
        let p = build(&[rec(2.0, Arm::Placebo, 31.0, 31.0, Gamma::Infection, false)]);
        assert!(jumps(&p, Process::Blinded).is_empty());
        let p = build(&[rec(2.0, Arm::Vaccine, 31.0, 25.0, Gamma::Pdcv, false)]);
        assert_eq!(jumps(&p, Process::Unblinded), vec![(0, 31.0)]);
    }

    #[test]
    fn at_most_one_active_jump_per_participant() {
        let records = vec![
            rec(1.0, Arm::Placebo, 10.0, 10.0, Gamma::Infection, false),
            rec(1.0, Arm::Vaccine, 30.0, 30.0, Gamma::Infection, false),
            rec(1.0, Arm::Vaccine, 30.0, 20.0, Gamma::Requested, false),
            rec(1.0, Arm::Placebo, 45.0, 22.0, Gamma::Pdcv, true),
            rec(1.0, Arm::Placebo, 52.0, 22.0, Gamma::Pdcv, true),
        ];
        let p = build(&records);
        let mut count = vec![0; records.len()];
        for e in &p.exposures {
            if e.jump.is_some() {
                count[e.participant] += 1;
            }
        }
        assert_eq!(count, vec![1, 1, 1, 1, 1]);
    }

    #[test]
    fn at_risk_sums_before_entry_are_zero() {
        let p = build(&[rec(2.0, Arm::Placebo, 30.0, 30.0, Gamma::Infection, false)]);
        let s = at_risk_b(&p, 1.0, &Theta::zeros(1));
        assert_eq!(s.s0, 0.0);
        assert_eq!(s.s1.amax(), 0.0);
        assert_eq!(at_risk_b(&p, 5.0, &Theta::zeros(1)).s0, 1.0);
    }

    #[test]
    fn three_subject_blinded_sums_by_hand() {
        // t = 28: placebo at risk, vaccinee with u = 28-1-6 = 21 > 20,
        // vaccinee with u = 28-10-6 = 12.
        let records = vec![
            rec(2.0, Arm::Placebo, 30.0, 30.0, Gamma::Infection, false),
            rec(1.0, Arm::Vaccine, 29.0, 29.0, Gamma::Infection, false),
            rec(10.0, Arm::Vaccine, 60.0, 30.0, Gamma::Pdcv, false),
        ];
        let p = build(&records);
        let theta = Theta::new(-1.0, vec![0.7]);
        let s = at_risk_b(&p, 28.0, &theta);
        let y2 = (-1.0f64 + 0.7).exp();
        let y3 = (-1.0f64).exp();
        assert_relative_eq!(s.s0, 1.0 + y2 + y3, epsilon = 1e-14);
        assert_relative_eq!(s.s1[0], y2 + y3, epsilon = 1e-14);
        assert_relative_eq!(s.s1[1], y2, epsilon = 1e-14);
        assert_relative_eq!(s.s2[(0, 0)], y2 + y3, epsilon = 1e-14);
        assert_relative_eq!(s.s2[(0, 1)], y2, epsilon = 1e-14);
        assert_relative_eq!(s.s2[(1, 1)], y2, epsilon = 1e-14);
    }

    #[test]
    fn four_subject_unblinded_sums_by_hand() {
        let records = vec![
            // crossed over at 20: at risk from 26, u = t - 26
            rec(2.0, Arm::Placebo, 60.0, 20.0, Gamma::Requested, true),
            // declined
            rec(2.0, Arm::Placebo, 60.0, 22.0, Gamma::Pdcv, false),
            // vaccinee unblinded at 23, u = t - 1 - 6
            rec(1.0, Arm::Vaccine, 60.0, 23.0, Gamma::Pdcv, false),
            // vaccinee infected before the evaluation time
            rec(1.0, Arm::Vaccine, 30.0, 24.0, Gamma::Pdcv, false),
        ];
        let p = build(&records);
        let theta = Theta::new(3.0, vec![0.5]);
        // t = 25: both vaccinees at u = 18, below the knot
        assert_eq!(at_risk_u(&p, 25.0, &theta).s0, 2.0);
        let s = at_risk_u(&p, 40.0, &theta);
        // placebo u = 14 (below knot), vaccinee u = 33 (above)
        assert_relative_eq!(s.s0, 1.0 + 0.5f64.exp(), epsilon = 1e-14);
        assert_eq!(s.s1[0], 0.0);
        assert_relative_eq!(s.s1[1], 0.5f64.exp(), epsilon = 1e-14);
        let s = at_risk_u(&p, 40.0, &Theta::new(3.0, vec![0.0]));
        assert_eq!(s.s0, 2.0);
    }

    #[test]
    fn crossover_before_lag_ends_contributes_nothing() {
        let records = vec![rec(2.0, Arm::Placebo, 60.0, 20.0, Gamma::Requested, true)];
        let p = build(&records);
        assert_eq!(at_risk_u(&p, 25.9, &Theta::zeros(1)).s0, 0.0);
    }
}
