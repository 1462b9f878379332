use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::model::{Arm, Theta, WaningModelSpec};
use crate::nuisance::StepFunction;

use super::equations::{Engine, Evaluation};
use super::processes::{Process, WeightedProcesses};
use super::report::{default_taus, report_ve, wald_waning, VeEstimate, WaldTest};
use super::EstimationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Convergence threshold on `‖EF‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Level of the one-sided waning test.
    pub alpha: f64,
    /// Times since first dose at which to report VE; defaults to one per
    /// waning segment.
    pub taus: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 40,
            alpha: 0.05,
            taus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub ef_norm: f64,
    /// Step-halving factor applied to reach this iterate.
    pub step_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: Theta,
    /// Sandwich covariance of θ̂, row-major.
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub ve_estimates: Vec<VeEstimate>,
    pub wald_waning: Vec<WaldTest>,
    pub iterations: usize,
    pub converged: bool,
    pub ef_norm: f64,
    pub trace: Vec<IterationRecord>,
    pub cumhaz_b: StepFunction,
    pub cumhaz_u: StepFunction,
    pub spec: WaningModelSpec,
    pub lag: f64,
    pub n_participants: usize,
    pub n_jumps_blinded: usize,
    pub n_jumps_unblinded: usize,
}

impl EstimationResult {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.cov.len();
        DMatrix::from_fn(d, d, |a, b| self.cov[a][b])
    }

    /// Recomputes the VE table for other times since first dose.
    pub fn report(&self, taus: &[(String, f64)]) -> Result<Vec<VeEstimate>, EstimationError> {
        Ok(report_ve(
            &self.theta_hat,
            &self.cov_matrix(),
            &self.spec,
            self.lag,
            taus,
        )?)
    }
}

/// Human-readable name of coordinate `k` of θ.
pub fn coordinate_name(k: usize, dim_theta1: usize) -> String {
    match (k, dim_theta1) {
        (0, _) => "θ₀".to_string(),
        (_, 1) => "θ₁".to_string(),
        (k, _) => format!("θ₁[{}]", k),
    }
}

fn check_identifiable(proc: &WeightedProcesses) -> Result<(), EstimationError> {
    let arm_jump = |arm: Arm| {
        proc.exposures_of(Process::Blinded)
            .any(|e| e.arm == arm && e.jump.is_some())
    };
    for (arm, name) in [(Arm::Vaccine, "vaccine"), (Arm::Placebo, "placebo")] {
        if !arm_jump(arm) {
            return Err(EstimationError::Identifiability {
                coordinate: "θ₀".into(),
                reason: format!("no blinded {name} infections"),
            });
        }
    }
    let k = proc.spec.dim_theta1();
    let mut seen = vec![false; k];
    let mut basis = vec![0.0; k];
    for e in proc.exposures.iter().filter(|e| e.waning) {
        if let Some(t) = e.jump {
            proc.spec.basis_into(t - e.origin, &mut basis);
            for (s, b) in seen.iter_mut().zip(&basis) {
                *s |= *b != 0.0;
            }
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(EstimationError::Identifiability {
            coordinate: coordinate_name(j + 1, k),
            reason: "no infections inside its waning segment".into(),
        });
    }
    Ok(())
}

/// Newton direction `−J⁻¹·EF`, or an identifiability error naming the
/// coordinate that dominates the null direction of `J`.
fn newton_step(jac: &DMatrix<f64>, ef: &DVector<f64>, dim_theta1: usize) -> Result<DVector<f64>, EstimationError> {
    let neg = -jac;
    let eig = SymmetricEigen::new(neg.clone());
    let max = eig.eigenvalues.amax();
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty");
    if !(max > 0.0) || min <= 1e-12 * max {
        let v = eig.eigenvectors.column(imin);
        let k = v.iamax();
        return Err(EstimationError::Identifiability {
            coordinate: coordinate_name(k, dim_theta1),
            reason: "singular Jacobian".into(),
        });
    }
    neg.cholesky()
        .map(|c| c.solve(ef))
        .ok_or_else(|| EstimationError::Identifiability {
            coordinate: coordinate_name(0, dim_theta1),
            reason: "Jacobian is not negative definite".into(),
        })
}

/// Solves the profiled estimating equation by Newton-Raphson with
/// step-halving on `‖EF‖₂`, then fills the sandwich covariance, VE table and
/// waning test.
pub fn solve_theta(
    proc: &WeightedProcesses,
    init: &Theta,
    opts: &SolverOptions,
) -> Result<EstimationResult, EstimationError> {
    let k = proc.spec.dim_theta1();
    if init.theta1.len() != k {
        return Err(crate::model::ModelError::DimensionMismatch {
            expected: k,
            found: init.theta1.len(),
        }
        .into());
    }
    check_identifiable(proc)?;
    let engine = Engine::new(proc, true);

    let mut theta = DVector::from_vec(init.to_vec());
    let mut eval = engine.evaluate(theta.as_slice())?;
    let mut trace = vec![IterationRecord {
        iteration: 0,
        theta: theta.iter().copied().collect(),
        ef_norm: eval.ef.amax(),
        step_scale: 0.0,
    }];
    let mut iterations = 0;
    while eval.ef.amax() >= opts.tol {
        if iterations == opts.max_iter {
            log::debug!("solve_theta trace: {trace:?}");
            return Err(EstimationError::NonConvergence {
                iterations,
                ef_norm: eval.ef.amax(),
            });
        }
        let step = newton_step(&eval.jac, &eval.ef, k)?;
        let norm = eval.ef.norm();
        let mut scale = 1.0;
        let mut halvings = 0;
        let (next, next_eval) = loop {
            let cand = &theta + &step * scale;
            let cand_eval = engine.evaluate(cand.as_slice())?;
            if cand_eval.ef.norm() < norm || halvings == opts.max_halvings {
                break (cand, cand_eval);
            }
            scale *= 0.5;
            halvings += 1;
        };
        theta = next;
        eval = next_eval;
        iterations += 1;
        trace.push(IterationRecord {
            iteration: iterations,
            theta: theta.iter().copied().collect(),
            ef_norm: eval.ef.amax(),
            step_scale: scale,
        });
    }

    let cov = sandwich_from(&engine, theta.as_slice(), &eval, k)?;
    let theta_hat = Theta::from_slice(theta.as_slice());
    let taus: Vec<(String, f64)> = match &opts.taus {
        Some(t) => t.iter().map(|tau| (format!("VE@tau={tau}"), *tau)).collect(),
        None => default_taus(&proc.spec, proc.timeline.lag),
    };
    let ve_estimates = report_ve(&theta_hat, &cov, &proc.spec, proc.timeline.lag, &taus)?;
    let wald = wald_waning(&theta_hat, &cov, opts.alpha);
    let mut hazards = engine.hazard_increments(&eval).into_iter();
    let (tb, ib) = hazards.next().expect("blinded grid");
    let (tu, iu) = hazards.next().expect("unblinded grid");
    Ok(EstimationResult {
        se: (0..cov.nrows()).map(|a| cov[(a, a)].max(0.0).sqrt()).collect(),
        cov: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        theta_hat,
        ve_estimates,
        wald_waning: wald,
        iterations,
        converged: true,
        ef_norm: eval.ef.amax(),
        trace,
        cumhaz_b: StepFunction::from_increments(tb, &ib),
        cumhaz_u: StepFunction::from_increments(tu, &iu),
        spec: proc.spec.clone(),
        lag: proc.timeline.lag,
        n_participants: proc.n_participants,
        n_jumps_blinded: proc.n_jumps(Process::Blinded),
        n_jumps_unblinded: proc.n_jumps(Process::Unblinded),
    })
}

fn sandwich_from(
    engine: &Engine<'_>,
    theta: &[f64],
    eval: &Evaluation,
    dim_theta1: usize,
) -> Result<DMatrix<f64>, EstimationError> {
    let d = theta.len();
    let psi = engine.influence(theta, eval);
    let mut b = DMatrix::zeros(d, d);
    for p in &psi {
        b += p * p.transpose();
    }
    let jinv = (-&eval.jac)
        .try_inverse()
        .ok_or_else(|| EstimationError::Identifiability {
            coordinate: coordinate_name(0, dim_theta1),
            reason: "singular Jacobian at the solution".into(),
        })?;
    let cov = &jinv * b * jinv.transpose();
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Sandwich covariance `J⁻¹ (Σᵢ ψ̂ᵢψ̂ᵢᵀ) J⁻ᵀ` at `theta_hat`.
pub fn sandwich_cov(proc: &WeightedProcesses, theta_hat: &Theta) -> Result<DMatrix<f64>, EstimationError> {
    let engine = Engine::new(proc, true);
    let th = theta_hat.to_vec();
    let eval = engine.evaluate(&th)?;
    sandwich_from(&engine, &th, &eval, proc.spec.dim_theta1())
}

/// Per-participant influence contributions ψ̂ᵢ at θ (they sum to EF(θ)).
pub fn influence_contributions(proc: &WeightedProcesses, theta: &Theta) -> Result<Vec<DVector<f64>>, EstimationError> {
    let engine = Engine::new(proc, true);
    let th = theta.to_vec();
    let eval = engine.evaluate(&th)?;
    Ok(engine.influence(&th, &eval))
}
