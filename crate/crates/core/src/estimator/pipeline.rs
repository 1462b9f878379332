use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{validate_dataset, ParticipantRecord, Theta, TrialTimeline, WaningModelSpec};
use crate::nuisance::{NuisanceFit, NuisanceOptions, StabilizedWeights};

use super::processes::{build_processes, Process, WeightedProcesses, Weights};
use super::solve::{solve_theta, EstimationResult, SolverOptions};
use super::EstimationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// All weights equal to one.
    Unit,
    /// Stabilized inverse-probability weights from fitted nuisance models.
    #[default]
    Estimated,
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightMode::Unit => "unit",
            WeightMode::Estimated => "estimated",
        })
    }
}

impl std::str::FromStr for WeightMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" => Ok(WeightMode::Unit),
            "estimated" => Ok(WeightMode::Estimated),
            other => Err(format!("unknown weight mode `{other}` (expected unit or estimated)")),
        }
    }
}

/// Summary of the weights entering one process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub process: Process,
    pub n_exposures: usize,
    /// Absent when the process has no exposures.
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    /// Kish effective sample size `(Σw)² / Σw²`.
    pub ess: f64,
    /// Participant index and weight of the largest weights, descending.
    pub largest: Vec<(usize, f64)>,
}

impl WeightDiagnostics {
    /// Time-varying blinded weights are evaluated at the window end.
    pub fn compute(proc: &WeightedProcesses, top: usize) -> Vec<Self> {
        Process::ALL
            .iter()
            .map(|&process| {
                let mut w: Vec<(usize, f64)> = proc
                    .exposures_of(process)
                    .map(|e| (e.participant, proc.weight_at(e, e.window.hi)))
                    .collect();
                let n = w.len();
                let sum: f64 = w.iter().map(|x| x.1).sum();
                let sum2: f64 = w.iter().map(|x| x.1 * x.1).sum();
                let (min, max) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x.1), hi.max(x.1))
                });
                w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                w.truncate(top);
                WeightDiagnostics {
                    process,
                    n_exposures: n,
                    min: (n > 0).then_some(min),
                    max: (n > 0).then_some(max),
                    mean: (n > 0).then(|| sum / n as f64),
                    ess: if sum2 > 0.0 { sum * sum / sum2 } else { 0.0 },
                    largest: w,
                }
            })
            .collect()
    }
}

/// Output of [`estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub weight_mode: WeightMode,
    pub result: EstimationResult,
    pub nuisance: Option<NuisanceFit>,
    pub diagnostics: Vec<WeightDiagnostics>,
}

/// Options for [`estimate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub nuisance: NuisanceOptions,
    pub solver: SolverOptions,
    /// Starting value; zero when absent.
    pub init: Option<Theta>,
}

/// Validates the data, fits the nuisance models when requested, and solves
/// for θ.
pub fn estimate(
    records: &[ParticipantRecord],
    tl: &TrialTimeline,
    spec: &WaningModelSpec,
    mode: WeightMode,
    opts: &EstimateOptions,
) -> Result<Estimate, EstimationError> {
    tl.validate()?;
    spec.validate(Some(tl.t_analysis))?;
    validate_dataset(records, tl).map_err(|v| EstimationError::InvalidData {
        n: v.len(),
        first: v[0].0,
        detail: format!("{:?}", v[0].1),
    })?;
    let nuisance = match mode {
        WeightMode::Unit => None,
        WeightMode::Estimated => Some(NuisanceFit::fit(records, tl, &opts.nuisance)?),
    };
    estimate_with(records, tl, spec, nuisance, mode, opts)
}

/// Like [`estimate`], reusing an already fitted nuisance model (or none for
/// unit weights). The data are not revalidated.
pub fn estimate_with(
    records: &[ParticipantRecord],
    tl: &TrialTimeline,
    spec: &WaningModelSpec,
    nuisance: Option<NuisanceFit>,
    mode: WeightMode,
    opts: &EstimateOptions,
) -> Result<Estimate, EstimationError> {
    let stabilized = nuisance
        .as_ref()
        .map(|fit| StabilizedWeights::compute(fit, records))
        .transpose()?;
    let weights = match &stabilized {
        Some(w) => Weights::Stabilized(w),
        None => Weights::Unit,
    };
    let proc = build_processes(records, tl, spec, weights)?;
    let init = opts.init.clone().unwrap_or_else(|| Theta::zeros(spec.dim_theta1()));
    let result = solve_theta(&proc, &init, &opts.solver)?;
    Ok(Estimate {
        weight_mode: mode,
        result,
        diagnostics: WeightDiagnostics::compute(&proc, 10),
        nuisance,
    })
}

/// Nonparametric bootstrap covariance of θ̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCov {
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub replicates: usize,
    /// Resamples on which the pipeline failed; they are excluded.
    pub failures: usize,
}

/// Resamples participants with replacement and reruns the whole pipeline,
/// nuisance fits included, on each resample. Resample `b` draws from its own
/// ChaCha stream, so the result does not depend on the thread count.
pub fn bootstrap_cov(
    records: &[ParticipantRecord],
    tl: &TrialTimeline,
    spec: &WaningModelSpec,
    mode: WeightMode,
    opts: &EstimateOptions,
    reps: usize,
    seed: u64,
) -> Result<BootstrapCov, EstimationError> {
    let n = records.len();
    let thetas: Vec<Option<Vec<f64>>> = (0..reps as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let sample: Vec<ParticipantRecord> = (0..n).map(|_| records[rng.random_range(0..n)].clone()).collect();
            let nuisance = match mode {
                WeightMode::Unit => None,
                WeightMode::Estimated => Some(NuisanceFit::fit(&sample, tl, &opts.nuisance).ok()?),
            };
            estimate_with(&sample, tl, spec, nuisance, mode, opts)
                .ok()
                .map(|e| e.result.theta_hat.to_vec())
        })
        .collect();
    let ok: Vec<&Vec<f64>> = thetas.iter().flatten().collect();
    let d = 1 + spec.dim_theta1();
    if ok.len() < 2 {
        return Err(EstimationError::Bootstrap {
            succeeded: ok.len(),
            reps,
        });
    }
    let m = ok.len() as f64;
    let mean: Vec<f64> = (0..d).map(|a| ok.iter().map(|t| t[a]).sum::<f64>() / m).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| ok.iter().map(|t| (t[a] - mean[a]) * (t[b] - mean[b])).sum::<f64>() / (m - 1.0))
                .collect()
        })
        .collect();
    Ok(BootstrapCov {
        se: (0..d).map(|a| cov[a][a].sqrt()).collect(),
        cov,
        replicates: ok.len(),
        failures: reps - ok.len(),
    })
}
