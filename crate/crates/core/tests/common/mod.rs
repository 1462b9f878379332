//! Shared fixtures and independent oracles for the integration tests.
//!
//! The oracle evaluates the at-risk and jump indicators directly from each
//! record, without going through the exposure lists built by the library.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ve_wane::model::{Arm, Gamma, ParticipantRecord, Theta, TrialTimeline, WaningModelSpec};
use ve_wane::nuisance::{BlindedWeight, KrCumhaz, StabilizedWeights, StepFunction};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random small trial: entries on `[0, T_A]`, a mix of requested, PDCV and
/// never-unblinded participants, and most participants infected at a
/// uniform time before 52.
pub fn random_toy(rng: &mut ChaCha8Rng, n: usize, tl: &TrialTimeline) -> Vec<ParticipantRecord> {
    (0..n)
        .map(|_| {
            let entry = rng.random_range(0.0..tl.t_accrual);
            let arm = if rng.random_bool(0.5) {
                Arm::Vaccine
            } else {
                Arm::Placebo
            };
            let u_kind: f64 = rng.random();
            let r_tilde = if u_kind < 0.3 {
                Some((Gamma::Requested, rng.random_range(tl.t_pfizer..tl.t_pdcv_start)))
            } else if u_kind < 0.8 {
                Some((Gamma::Pdcv, rng.random_range(tl.t_pdcv_start..tl.t_pdcv_end)))
            } else {
                None
            };
            let psi = rng.random_bool(0.7);
            let infected = rng.random_bool(0.85);
            let u = if infected {
                rng.random_range(entry + 0.25..tl.t_analysis)
            } else {
                tl.t_analysis + 8.0
            };
            let (gamma, r) = match r_tilde {
                Some((g, r)) if r < u => (g, r),
                _ => (Gamma::Infection, u),
            };
            ParticipantRecord {
                entry,
                covariates: vec![rng.random_range(0.0..1.0)],
                arm,
                infect_time: u,
                infected,
                r_time: r,
                gamma,
                psi: arm == Arm::Placebo && gamma != Gamma::Infection && psi,
                psi_observed: true,
            }
        })
        .collect()
}

/// Arbitrary positive weights with the same structure as fitted ones:
/// random cumulative hazards for the two unblinding causes and random
/// per-participant coefficients.
pub fn random_weights(rng: &mut ChaCha8Rng, records: &[ParticipantRecord], tl: &TrialTimeline) -> StabilizedWeights {
    let mut step = |lo: f64, hi: f64| {
        let mut times: Vec<f64> = (0..6).map(|_| rng.random_range(lo..hi)).collect();
        times.sort_by(f64::total_cmp);
        let inc: Vec<f64> = times.iter().map(|_| rng.random_range(0.01..0.2)).collect();
        StepFunction::from_increments(times, &inc)
    };
    let kr = KrCumhaz {
        cause1: step(tl.t_pfizer, tl.t_pdcv_start),
        cause2: step(tl.t_pdcv_start, tl.t_pdcv_end),
        t_pfizer: tl.t_pfizer,
        t_pdcv_start: tl.t_pdcv_start,
        t_pdcv_end: tl.t_pdcv_end,
    };
    let blinded = records
        .iter()
        .map(|_| BlindedWeight {
            scale: rng.random_range(0.5..2.0),
            c1: rng.random_range(-0.5..0.5),
            c2: rng.random_range(-0.5..0.5),
            d1: 1.0,
            d2: 1.0,
        })
        .collect();
    let unblinded = records
        .iter()
        .map(|r| (r.gamma != Gamma::Infection && (r.arm == Arm::Vaccine || r.psi)).then(|| rng.random_range(0.5..2.0)))
        .collect();
    StabilizedWeights { kr, blinded, unblinded }
}

/// Basis of `g`, written out independently of the library.
pub fn basis(spec: &WaningModelSpec, u: f64) -> Vec<f64> {
    match spec {
        WaningModelSpec::Linear => vec![u],
        WaningModelSpec::PiecewiseConstant { knots } => (0..knots.len())
            .map(|j| {
                let above = u > knots[j];
                let below = j + 1 == knots.len() || u <= knots[j + 1];
                if above && below {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// One participant's contribution to one process at time `t`.
pub struct Term {
    pub z: Vec<f64>,
    /// Weight times `exp(θᵀZ)`.
    pub y: f64,
    pub weight: f64,
}

pub struct Oracle<'a> {
    pub records: &'a [ParticipantRecord],
    pub tl: TrialTimeline,
    pub spec: WaningModelSpec,
    pub weights: Option<&'a StabilizedWeights>,
}

impl<'a> Oracle<'a> {
    pub fn new(
        records: &'a [ParticipantRecord],
        tl: &TrialTimeline,
        spec: &WaningModelSpec,
        weights: Option<&'a StabilizedWeights>,
    ) -> Self {
        Self {
            records,
            tl: *tl,
            spec: spec.clone(),
            weights,
        }
    }

    fn dim(&self) -> usize {
        1 + self.spec.dim_theta1()
    }

    /// Blinded at-risk term of participant `i` at `t`, if any.
    pub fn blinded(&self, i: usize, t: f64, theta: &[f64]) -> Option<Term> {
        let r = &self.records[i];
        let at_risk = r.entry < t && t <= r.infect_time && t < self.tl.t_pdcv_end && t <= r.r_time;
        if !at_risk {
            return None;
        }
        let z = match r.arm {
            Arm::Placebo => vec![0.0; self.dim()],
            Arm::Vaccine => {
                if t < r.entry + self.tl.lag {
                    return None;
                }
                let mut z = vec![1.0];
                z.extend(basis(&self.spec, t - r.entry - self.tl.lag));
                z
            }
        };
        let weight = match self.weights {
            None => 1.0,
            Some(w) => w.blinded_at(i, t).expect("positive blinded weight"),
        };
        let lin: f64 = z.iter().zip(theta).map(|(a, b)| a * b).sum();
        Some(Term {
            y: weight * lin.exp(),
            z,
            weight,
        })
    }

    /// Unblinded at-risk term of participant `i` at `t`, if any.
    pub fn unblinded(&self, i: usize, t: f64, theta: &[f64]) -> Option<Term> {
        let r = &self.records[i];
        if r.gamma == Gamma::Infection || t > r.infect_time || t > self.tl.t_analysis {
            return None;
        }
        let origin = match r.arm {
            Arm::Vaccine if t > r.r_time => r.entry + self.tl.lag,
            Arm::Placebo if r.psi && t - r.r_time >= self.tl.lag => r.r_time + self.tl.lag,
            _ => return None,
        };
        let mut z = vec![0.0];
        z.extend(basis(&self.spec, t - origin));
        let weight = match self.weights {
            None => 1.0,
            Some(w) => w.unblinded[i].expect("unblinded weight"),
        };
        let lin: f64 = z.iter().zip(theta).map(|(a, b)| a * b).sum();
        Some(Term {
            y: weight * lin.exp(),
            z,
            weight,
        })
    }

    /// Observed jumps of each process as `(participant, time)`.
    pub fn jumps(&self) -> [Vec<(usize, f64)>; 2] {
        let mut b = Vec::new();
        let mut u = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            if !r.infected {
                continue;
            }
            let t = r.infect_time;
            if self.blinded(i, t, &vec![0.0; self.dim()]).is_some() {
                b.push((i, t));
            } else if self.unblinded(i, t, &vec![0.0; self.dim()]).is_some() {
                u.push((i, t));
            }
        }
        [b, u]
    }

    fn term(&self, process: usize, i: usize, t: f64, theta: &[f64]) -> Option<Term> {
        if process == 0 {
            self.blinded(i, t, theta)
        } else {
            self.unblinded(i, t, theta)
        }
    }

    fn distinct_times(jumps: &[(usize, f64)]) -> Vec<f64> {
        let mut t: Vec<f64> = jumps.iter().map(|j| j.1).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// Breslow-type increments `dΛ̂ᵏ(t) = dÑᵏ(t) / ΣỸᵏ(t)` at θ.
    pub fn hazard_increments(&self, theta: &[f64]) -> [Vec<(f64, f64)>; 2] {
        let jumps = self.jumps();
        let mut out: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
        for k in 0..2 {
            for t in Self::distinct_times(&jumps[k]) {
                let dn: f64 = jumps[k]
                    .iter()
                    .filter(|j| j.1 == t)
                    .map(|j| self.term(k, j.0, t, theta).unwrap().weight)
                    .sum();
                let s0: f64 = (0..self.records.len())
                    .filter_map(|i| self.term(k, i, t, theta))
                    .map(|x| x.y)
                    .sum();
                out[k].push((t, dn / s0));
            }
        }
        out
    }

    /// Two-stage evaluation: jump sum of `Z` minus the compensator
    /// `Σₜ Σᵢ Zᵢ Ỹᵢ dΛ(t)` with the increments supplied.
    pub fn ef_given_hazards(&self, theta: &[f64], dl: &[Vec<(f64, f64)>; 2]) -> DVector<f64> {
        let d = self.dim();
        let jumps = self.jumps();
        let mut ef = DVector::zeros(d);
        for k in 0..2 {
            for &(i, t) in &jumps[k] {
                let term = self.term(k, i, t, theta).unwrap();
                for a in 0..d {
                    ef[a] += term.weight * term.z[a];
                }
            }
            for &(t, dlam) in &dl[k] {
                for i in 0..self.records.len() {
                    if let Some(term) = self.term(k, i, t, theta) {
                        for a in 0..d {
                            ef[a] -= term.z[a] * term.y * dlam;
                        }
                    }
                }
            }
        }
        ef
    }

    /// Profiled estimating function through the plug-in path.
    pub fn ef(&self, theta: &[f64]) -> DVector<f64> {
        self.ef_given_hazards(theta, &self.hazard_increments(theta))
    }

    /// Per-participant ψᵢ on the pooled jump grid.
    pub fn psi(&self, theta: &[f64]) -> Vec<DVector<f64>> {
        let d = self.dim();
        let dl = self.hazard_increments(theta);
        let jumps = self.jumps();
        let n = self.records.len();
        let mut out = vec![DVector::zeros(d); n];
        for k in 0..2 {
            for &(t, dlam) in &dl[k] {
                let terms: Vec<Option<Term>> = (0..n).map(|i| self.term(k, i, t, theta)).collect();
                let s0: f64 = terms.iter().flatten().map(|x| x.y).sum();
                let mut zbar = DVector::<f64>::zeros(d);
                for x in terms.iter().flatten() {
                    for a in 0..d {
                        zbar[a] += x.z[a] * x.y / s0;
                    }
                }
                for (i, x) in terms.iter().enumerate() {
                    let Some(x) = x else { continue };
                    let jumped = jumps[k].iter().any(|j| j.0 == i && j.1 == t);
                    for a in 0..d {
                        if jumped {
                            out[i][a] += x.weight * (x.z[a] - zbar[a]);
                        }
                        out[i][a] -= (x.z[a] - zbar[a]) * x.y * dlam;
                    }
                }
            }
        }
        out
    }
}

/// Solves `EF(θ) = 0` with the Breslow increments held fixed; concave
/// Poisson-type problem solved by damped Newton.
pub fn solve_fixed_hazards(oracle: &Oracle<'_>, dl: &[Vec<(f64, f64)>; 2], init: &[f64]) -> Vec<f64> {
    let d = init.len();
    let mut theta = init.to_vec();
    for _ in 0..200 {
        let ef = oracle.ef_given_hazards(&theta, dl);
        if ef.amax() < 1e-12 {
            break;
        }
        let mut info = DMatrix::zeros(d, d);
        for (k, incs) in dl.iter().enumerate() {
            for &(t, dlam) in incs {
                for i in 0..oracle.records.len() {
                    if let Some(x) = oracle.term(k, i, t, &theta) {
                        for a in 0..d {
                            for b in 0..d {
                                info[(a, b)] += x.z[a] * x.z[b] * x.y * dlam;
                            }
                        }
                    }
                }
            }
        }
        let step = info.lu().solve(&ef).expect("nonsingular information");
        let norm = ef.norm();
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            if oracle.ef_given_hazards(&cand, dl).norm() < norm || scale < 1e-6 {
                theta = cand;
                break;
            }
            scale *= 0.5;
        }
    }
    theta
}

pub fn theta_of(v: &[f64]) -> Theta {
    Theta::from_slice(v)
}

/// Nested bisection on the oracle: `EF₁` is decreasing in θ₁ for fixed θ₀,
/// and the profiled `EF₀` is decreasing in θ₀.
pub fn bisect_root(oracle: &Oracle<'_>, lo: f64, hi: f64) -> Option<[f64; 2]> {
    let bisect = |f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64| -> Option<f64> {
        if !(f(a) > 0.0 && f(b) < 0.0) {
            return None;
        }
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    };
    let inner = |t0: f64| bisect(&|t1| oracle.ef(&[t0, t1])[1], lo, hi);
    let t0 = bisect(&|t0| inner(t0).map_or(f64::NAN, |t1| oracle.ef(&[t0, t1])[0]), lo, hi)?;
    Some([t0, inner(t0)?])
}

/// Brute-force root of the 1-knot estimating function: the grid point of
/// smallest `‖EF‖` on `[−5, 5]²` (step 0.05), refined by nested bisection in
/// a bracket around it, falling back to the whole box.
pub fn grid_then_bisect(oracle: &Oracle<'_>) -> Option<[f64; 2]> {
    let steps = 200;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=steps {
        for j in 0..=steps {
            let t = [-5.0 + 0.05 * i as f64, -5.0 + 0.05 * j as f64];
            let norm = oracle.ef(&t).norm();
            if norm < best.0 {
                best = (norm, t[0], t[1]);
            }
        }
    }
    let (_, g0, g1) = best;
    if g0.abs() >= 4.9 || g1.abs() >= 4.9 {
        return None;
    }
    let lo = g0.min(g1) - 0.5;
    let hi = g0.max(g1) + 0.5;
    bisect_root(oracle, lo, hi).or_else(|| bisect_root(oracle, -5.0, 5.0))
}
