//! The profiled estimating function for θ and its Jacobian.
//!
//! All time integrals reduce to sums over the observed jump times of each
//! process. For piecewise-constant waning, `Z(t)` takes finitely many values,
//! so at each jump time the at-risk weights are pre-summed by distinct `Z`
//! and every later evaluation costs `O(#jump times × #patterns)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::model::Theta;

use super::processes::{Process, WeightedProcesses};
use super::EstimationError;

const CHUNK: usize = 2048;

struct Grouped {
    /// Z value of each pattern.
    patterns: Vec<Vec<f64>>,
    /// At-risk weight per (time, pattern), row-major by time.
    weight: Vec<f64>,
}

pub(crate) struct ProcessGrid {
    pub process: Process,
    pub times: Vec<f64>,
    /// `Σ w_j` over the jumps at each time.
    pub jump_weight: Vec<f64>,
    /// `Σ w_j Z_j` over the jumps at each time, row-major by time.
    pub jump_z: Vec<f64>,
    /// Exposure index and the grid indices inside its window.
    pub members: Vec<(usize, Range<usize>)>,
    grouped: Option<Grouped>,
}

/// Per-time quantities of one process at a fixed θ.
pub(crate) struct GridState {
    pub s0: Vec<f64>,
    /// `Z̄(t)`, row-major by time.
    pub zbar: Vec<f64>,
}

pub(crate) struct Evaluation {
    pub ef: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub states: Vec<GridState>,
}

pub(crate) struct Engine<'a> {
    pub proc: &'a WeightedProcesses,
    pub d: usize,
    pub grids: Vec<ProcessGrid>,
}

fn pattern_key(z: &[f64]) -> usize {
    let k = z.len() - 1;
    let seg = z[1..].iter().position(|&b| b != 0.0).map_or(0, |j| j + 1);
    usize::from(z[0] != 0.0) * (k + 1) + seg
}

impl<'a> Engine<'a> {
    /// `grouped` requests pattern pre-summing; it is ignored for linear
    /// waning, where `Z(t)` is continuous.
    pub fn new(proc: &'a WeightedProcesses, grouped: bool) -> Self {
        let d = proc.dim();
        let grouped = grouped && proc.spec.is_piecewise();
        let grids = Process::ALL
            .iter()
            .map(|&process| Self::build_grid(proc, process, grouped))
            .collect();
        Self { proc, d, grids }
    }

    fn build_grid(proc: &WeightedProcesses, process: Process, grouped: bool) -> ProcessGrid {
        let d = proc.dim();
        let times = proc.jump_times(process);
        let nt = times.len();
        let mut jump_weight = vec![0.0; nt];
        let mut jump_z = vec![0.0; nt * d];
        let mut members = Vec::new();
        let mut z = vec![0.0; d];
        for (idx, e) in proc.exposures.iter().enumerate() {
            if e.process != process {
                continue;
            }
            let range = e.window.grid_range(&times);
            if let Some(t) = e.jump {
                let k = times.partition_point(|&s| s < t);
                let w = proc.weight_at(e, t);
                proc.z_into(e, t, &mut z);
                jump_weight[k] += w;
                for a in 0..d {
                    jump_z[k * d + a] += w * z[a];
                }
            }
            if !range.is_empty() {
                members.push((idx, range));
            }
        }

        let grouped = grouped.then(|| {
            let k = d - 1;
            let npat = 2 * (k + 1);
            let patterns = (0..npat)
                .map(|key| {
                    let mut p = vec![0.0; d];
                    p[0] = if key > k { 1.0 } else { 0.0 };
                    let seg = key % (k + 1);
                    if seg > 0 {
                        p[seg] = 1.0;
                    }
                    p
                })
                .collect();
            let partials: Vec<Vec<f64>> = members
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut acc = vec![0.0; nt * npat];
                    let mut z = vec![0.0; d];
                    for (idx, range) in chunk {
                        let e = &proc.exposures[*idx];
                        for ti in range.clone() {
                            let t = times[ti];
                            proc.z_into(e, t, &mut z);
                            acc[ti * npat + pattern_key(&z)] += proc.weight_at(e, t);
                        }
                    }
                    acc
                })
                .collect();
            let mut weight = vec![0.0; nt * npat];
            for part in partials {
                for (w, p) in weight.iter_mut().zip(part) {
                    *w += p;
                }
            }
            Grouped { patterns, weight }
        });

        ProcessGrid {
            process,
            times,
            jump_weight,
            jump_z,
            members,
            grouped,
        }
    }

    /// At-risk sums `(S0, S1, S2)` at every grid time, flattened per time as
    /// `1 + d + d²` numbers.
    fn risk_sums(&self, grid: &ProcessGrid, theta: &DVector<f64>) -> Vec<f64> {
        let d = self.d;
        let stride = 1 + d + d * d;
        let nt = grid.times.len();
        let mut out = vec![0.0; nt * stride];
        let add = |slot: &mut [f64], y: f64, z: &[f64]| {
            slot[0] += y;
            for a in 0..d {
                slot[1 + a] += y * z[a];
                for b in 0..d {
                    slot[1 + d + a * d + b] += y * z[a] * z[b];
                }
            }
        };
        match &grid.grouped {
            Some(g) => {
                let npat = g.patterns.len();
                let rr: Vec<f64> = g
                    .patterns
                    .iter()
                    .map(|p| p.iter().zip(theta.iter()).map(|(z, t)| z * t).sum::<f64>().exp())
                    .collect();
                for ti in 0..nt {
                    let slot = &mut out[ti * stride..(ti + 1) * stride];
                    for (p, pat) in g.patterns.iter().enumerate() {
                        let w = g.weight[ti * npat + p];
                        if w != 0.0 {
                            add(slot, w * rr[p], pat);
                        }
                    }
                }
            }
            None => {
                let mut z = vec![0.0; d];
                for (idx, range) in &grid.members {
                    let e = &self.proc.exposures[*idx];
                    for ti in range.clone() {
                        let t = grid.times[ti];
                        self.proc.z_into(e, t, &mut z);
                        let lin: f64 = z.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
                        let y = self.proc.weight_at(e, t) * lin.exp();
                        add(&mut out[ti * stride..(ti + 1) * stride], y, &z);
                    }
                }
            }
        }
        out
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<Evaluation, EstimationError> {
        let d = self.d;
        let th = DVector::from_column_slice(theta);
        let mut ef = DVector::zeros(d);
        let mut jac = DMatrix::zeros(d, d);
        let mut states = Vec::with_capacity(self.grids.len());
        for grid in &self.grids {
            let sums = self.risk_sums(grid, &th);
            let stride = 1 + d + d * d;
            let nt = grid.times.len();
            let mut s0v = Vec::with_capacity(nt);
            let mut zbar = Vec::with_capacity(nt * d);
            for ti in 0..nt {
                let slot = &sums[ti * stride..(ti + 1) * stride];
                let s0 = slot[0];
                let jw = grid.jump_weight[ti];
                if !(s0 > 0.0 && s0.is_finite()) {
                    if jw != 0.0 {
                        return Err(EstimationError::DegenerateRiskSet {
                            process: grid.process,
                            time: grid.times[ti],
                        });
                    }
                    s0v.push(s0);
                    zbar.extend(std::iter::repeat_n(0.0, d));
                    continue;
                }
                let mean = DVector::from_fn(d, |a, _| slot[1 + a] / s0);
                for a in 0..d {
                    ef[a] += grid.jump_z[ti * d + a] - mean[a] * jw;
                    for b in 0..d {
                        let v = slot[1 + d + a * d + b] / s0 - mean[a] * mean[b];
                        jac[(a, b)] -= jw * v;
                    }
                }
                s0v.push(s0);
                zbar.extend(mean.iter());
            }
            states.push(GridState { s0: s0v, zbar });
        }
        Ok(Evaluation { ef, jac, states })
    }

    /// Influence contribution ψ̂ᵢ of every participant at θ (sum scale, so
    /// `Σᵢ ψ̂ᵢ = EF(θ)`). Compensators use the pooled jump grid.
    pub fn influence(&self, theta: &[f64], eval: &Evaluation) -> Vec<DVector<f64>> {
        let d = self.d;
        let proc = self.proc;
        let th = DVector::from_column_slice(theta);
        // exposure index -> (grid, member range)
        let mut by_exposure: Vec<Option<(usize, Range<usize>)>> = vec![None; proc.exposures.len()];
        for (g, grid) in self.grids.iter().enumerate() {
            for (idx, range) in &grid.members {
                by_exposure[*idx] = Some((g, range.clone()));
            }
        }
        let contributions: Vec<(usize, DVector<f64>)> = proc
            .exposures
            .par_iter()
            .enumerate()
            .map(|(idx, e)| {
                let mut psi = DVector::zeros(d);
                let mut z = vec![0.0; d];
                let g = e.process.index();
                let grid = &self.grids[g];
                let state = &eval.states[g];
                if let Some(t) = e.jump {
                    let ti = grid.times.partition_point(|&s| s < t);
                    proc.z_into(e, t, &mut z);
                    let w = proc.weight_at(e, t);
                    for a in 0..d {
                        psi[a] += w * (z[a] - state.zbar[ti * d + a]);
                    }
                }
                if let Some((_, range)) = &by_exposure[idx] {
                    for ti in range.clone() {
                        let t = grid.times[ti];
                        let dlam = grid.jump_weight[ti] / state.s0[ti];
                        proc.z_into(e, t, &mut z);
                        let lin: f64 = z.iter().zip(th.iter()).map(|(a, b)| a * b).sum();
                        let y = proc.weight_at(e, t) * lin.exp();
                        for a in 0..d {
                            psi[a] -= (z[a] - state.zbar[ti * d + a]) * dlam * y;
                        }
                    }
                }
                (e.participant, psi)
            })
            .collect();
        let mut out = vec![DVector::zeros(d); proc.n_participants];
        for (i, psi) in contributions {
            out[i] += psi;
        }
        out
    }

    /// `dΛ̂^k` increments on the jump grid of each process.
    pub fn hazard_increments(&self, eval: &Evaluation) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.grids
            .iter()
            .zip(&eval.states)
            .map(|(grid, state)| {
                let inc = grid.jump_weight.iter().zip(&state.s0).map(|(w, s0)| w / s0).collect();
                (grid.times.clone(), inc)
            })
            .collect()
    }
}

fn check_dim(proc: &WeightedProcesses, theta: &Theta) -> Result<(), EstimationError> {
    if theta.theta1.len() != proc.spec.dim_theta1() {
        return Err(EstimationError::Model(crate::model::ModelError::DimensionMismatch {
            expected: proc.spec.dim_theta1(),
            found: theta.theta1.len(),
        }));
    }
    Ok(())
}

/// `Σᵢ ∫ {Zᵢ(t) − Z̄(t)} dÑᵢ(t)` summed over the blinded and unblinded
/// processes.
pub fn estimating_function(proc: &WeightedProcesses, theta: &Theta) -> Result<DVector<f64>, EstimationError> {
    check_dim(proc, theta)?;
    Ok(Engine::new(proc, true).evaluate(&theta.to_vec())?.ef)
}

/// `−Σ_k Σ_t dÑ^k(t)·V^k(t)`, with `V^k` the Ỹ-weighted covariance of Z.
pub fn estimating_jacobian(proc: &WeightedProcesses, theta: &Theta) -> Result<DMatrix<f64>, EstimationError> {
    check_dim(proc, theta)?;
    Ok(Engine::new(proc, true).evaluate(&theta.to_vec())?.jac)
}
