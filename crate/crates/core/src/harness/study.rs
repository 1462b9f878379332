use std::sync::atomic::{AtomicUsize, Ordering};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::estimator::{
    coordinate_name, estimate_with, EstimateOptions, SolverOptions, VeEstimate, WaldTest, WeightMode,
};
use crate::model::{ve_from_theta, Theta, WaningModelSpec};
use crate::nuisance::NuisanceFit;
use crate::sim::{generate_dataset, replication_seed, ScenarioConfig};

use super::{HarnessError, RunConfig};

/// Per-replication quantities kept for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    pub theta: Vec<f64>,
    pub se: Vec<f64>,
    pub ve: Vec<VeEstimate>,
    pub tests: Vec<WaldTest>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub rep: usize,
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub estimate: Option<RepEstimate>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub median: f64,
    /// Absent with fewer than two completed replications.
    pub sd: Option<f64>,
    /// Mean sandwich standard error.
    pub mean_se: f64,
    /// Fraction of nominal 95% intervals containing the truth.
    pub coverage: f64,
}

/// One-sided waning test for one coordinate of θ₁.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub name: String,
    pub truth: f64,
    pub alpha: f64,
    pub rejection_rate: f64,
    /// The rejection rate when the null `θ₁ ≤ 0` holds.
    pub type_i_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub weight_mode: WeightMode,
    pub completed: usize,
    pub failures: usize,
    pub estimands: Vec<EstimandSummary>,
    pub tests: Vec<TestSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub preset: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub blocks: Vec<ModeSummary>,
}

/// Summary plus every replication, in replication order.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub summary: MonteCarloSummary,
    pub replications: Vec<ReplicationOutcome>,
}

fn outcome(rep: usize, seed: u64, mode: WeightMode, r: Result<RepEstimate, String>) -> ReplicationOutcome {
    let (estimate, failure) = match r {
        Ok(e) => (Some(e), None),
        Err(f) => (None, Some(f)),
    };
    ReplicationOutcome {
        rep,
        seed,
        weight_mode: mode,
        estimate,
        failure,
    }
}

fn replicate(
    scen: &ScenarioConfig,
    base_seed: u64,
    rep: usize,
    modes: &[WeightMode],
    opts: &EstimateOptions,
) -> Vec<ReplicationOutcome> {
    let seed = replication_seed(base_seed, rep as u64);
    let records = match generate_dataset(scen, scen.n, seed) {
        Ok(r) => r,
        Err(e) => {
            return modes
                .iter()
                .map(|&m| outcome(rep, seed, m, Err(format!("simulation: {e}"))))
                .collect()
        }
    };
    let tl = &scen.timeline;
    let nuisance = modes
        .contains(&WeightMode::Estimated)
        .then(|| NuisanceFit::fit(&records, tl, &opts.nuisance).map_err(|e| format!("nuisance: {e}")));
    modes
        .iter()
        .map(|&mode| {
            let fit = match (mode, &nuisance) {
                (WeightMode::Estimated, Some(Ok(f))) => Some(f.clone()),
                (WeightMode::Estimated, Some(Err(e))) => return outcome(rep, seed, mode, Err(e.clone())),
                _ => None,
            };
            let r = estimate_with(&records, tl, &scen.waning, fit, mode, opts)
                .map(|e| RepEstimate {
                    theta: e.result.theta_hat.to_vec(),
                    se: e.result.se.clone(),
                    ve: e.result.ve_estimates.clone(),
                    tests: e.result.wald_waning.clone(),
                    iterations: e.result.iterations,
                })
                .map_err(|e| e.to_string());
            outcome(rep, seed, mode, r)
        })
        .collect()
}

/// Runs `cfg.reps` replications of the configured preset on a worker pool.
/// Replication `r` uses seed `replication_seed(cfg.seed, r)`, and results are
/// reduced in replication order, so the summary does not depend on the
/// number of workers.
pub fn run_mc_study(cfg: &RunConfig) -> Result<StudyOutput, HarnessError> {
    cfg.validate()?;
    let scen = cfg
        .scenario_config()?
        .ok_or_else(|| HarnessError::Config("mc-study needs a `preset`".into()))?;
    let modes = cfg.weights.modes();
    let opts = EstimateOptions {
        solver: SolverOptions {
            alpha: cfg.alpha,
            taus: cfg.taus.clone(),
            ..SolverOptions::default()
        },
        ..EstimateOptions::default()
    };
    let done = AtomicUsize::new(0);
    let step = (cfg.reps / 10).max(1);
    let per_rep: Vec<Vec<ReplicationOutcome>> = cfg.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let out = replicate(&scen, cfg.seed, rep, &modes, &opts);
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if k.is_multiple_of(step) || k == cfg.reps {
                    info!("{k}/{} replications done", cfg.reps);
                }
                out
            })
            .collect()
    })?;
    let replications: Vec<ReplicationOutcome> = per_rep.into_iter().flatten().collect();
    for r in &replications {
        if let Some(f) = &r.failure {
            warn!("replication {} ({} weights) failed: {f}", r.rep, r.weight_mode);
        }
    }

    let limit = (cfg.max_failure_rate * cfg.reps as f64).floor() as usize;
    for &mode in &modes {
        let failed: Vec<&ReplicationOutcome> = replications
            .iter()
            .filter(|r| r.weight_mode == mode && r.failure.is_some())
            .collect();
        if failed.len() > limit || failed.len() == cfg.reps {
            return Err(HarnessError::TooManyFailures {
                weight_mode: mode,
                failed: failed.len(),
                reps: cfg.reps,
                limit,
                first: failed[0].failure.clone().unwrap_or_default(),
            });
        }
    }

    let summary = summarize(
        cfg.preset.map(|p| p.name()).unwrap_or_default(),
        &scen,
        cfg.reps,
        cfg.seed,
        cfg.alpha,
        &modes,
        &replications,
    )?;
    Ok(StudyOutput { summary, replications })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn estimand(name: String, truth: f64, est: &[f64], se: &[f64], covered: impl Iterator<Item = bool>) -> EstimandSummary {
    let hits = covered.filter(|&c| c).count();
    EstimandSummary {
        name,
        truth,
        mean: mean(est),
        median: median(est),
        sd: sample_sd(est),
        mean_se: mean(se),
        coverage: hits as f64 / est.len() as f64,
    }
}

/// Aggregates completed replications per weight mode. Estimands are the
/// coordinates of θ₁, the VE table rows, then θ₀. Truths come from the
/// scenario's θ and waning model.
pub fn summarize(
    preset: &str,
    scen: &ScenarioConfig,
    reps: usize,
    seed: u64,
    alpha: f64,
    modes: &[WeightMode],
    replications: &[ReplicationOutcome],
) -> Result<MonteCarloSummary, HarnessError> {
    let z = Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(0.975);
    let truth: &Theta = &scen.theta_true;
    let spec: &WaningModelSpec = &scen.waning;
    let lag = scen.timeline.lag;
    let d1 = truth.theta1.len();
    let truth_vec = truth.to_vec();

    let mut blocks = Vec::new();
    for &mode in modes {
        let ok: Vec<&RepEstimate> = replications
            .iter()
            .filter(|r| r.weight_mode == mode)
            .filter_map(|r| r.estimate.as_ref())
            .collect();
        let failures = replications
            .iter()
            .filter(|r| r.weight_mode == mode && r.failure.is_some())
            .count();
        if ok.is_empty() {
            return Err(HarnessError::Config(format!(
                "no completed replications with {mode} weights"
            )));
        }
        let theta_row = |k: usize| {
            let est: Vec<f64> = ok.iter().map(|e| e.theta[k]).collect();
            let se: Vec<f64> = ok.iter().map(|e| e.se[k]).collect();
            let t = truth_vec[k];
            estimand(
                coordinate_name(k, d1),
                t,
                &est,
                &se,
                ok.iter().map(|e| (e.theta[k] - t).abs() <= z * e.se[k]),
            )
        };
        let mut estimands: Vec<EstimandSummary> = (1..=d1).map(theta_row).collect();
        for (j, row) in ok[0].ve.iter().enumerate() {
            let t = ve_from_theta(truth, spec, lag, row.tau)?;
            let est: Vec<f64> = ok.iter().map(|e| e.ve[j].ve).collect();
            let se: Vec<f64> = ok.iter().map(|e| e.ve[j].se).collect();
            estimands.push(estimand(
                row.label.clone(),
                t,
                &est,
                &se,
                ok.iter().map(|e| e.ve[j].ci_lower <= t && t <= e.ve[j].ci_upper),
            ));
        }
        estimands.push(theta_row(0));

        let tests = (0..ok[0].tests.len())
            .map(|j| {
                let k = ok[0].tests[j].coordinate;
                let rate = ok.iter().filter(|e| e.tests[j].reject).count() as f64 / ok.len() as f64;
                let t = truth.theta1[k];
                TestSummary {
                    name: coordinate_name(k + 1, d1),
                    truth: t,
                    alpha,
                    rejection_rate: rate,
                    type_i_error: (t <= 0.0).then_some(rate),
                }
            })
            .collect();
        blocks.push(ModeSummary {
            weight_mode: mode,
            completed: ok.len(),
            failures,
            estimands,
            tests,
        });
    }
    Ok(MonteCarloSummary {
        preset: preset.to_string(),
        n: scen.n,
        reps,
        seed,
        alpha,
        blocks,
    })
}
