use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::estimator::{
    bootstrap_cov, coordinate_name, estimate_with, BootstrapCov, EstimateOptions, EstimationResult, SolverOptions,
    WeightDiagnostics, WeightMode,
};
use crate::model::{read_records_path, validate_dataset, write_records_path, Dataset};
use crate::nuisance::NuisanceFit;
use crate::sim::generate_dataset;

use super::{io_err, HarnessError, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRun {
    pub weight_mode: WeightMode,
    pub result: EstimationResult,
    pub diagnostics: Vec<WeightDiagnostics>,
    pub bootstrap: Option<BootstrapCov>,
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// CSV path, or `preset:<name>` for simulated data.
    pub data_source: String,
    pub n: usize,
    pub covariate_names: Vec<String>,
    pub runs: Vec<EstimateRun>,
    #[serde(skip)]
    pub nuisance: Option<NuisanceFit>,
}

fn load(cfg: &RunConfig) -> Result<(String, Dataset), HarnessError> {
    if let Some(path) = &cfg.data {
        return Ok((path.display().to_string(), read_records_path(path)?));
    }
    let scen = cfg
        .scenario_config()?
        .ok_or_else(|| HarnessError::Config("one of `preset` or `data` is required".into()))?;
    let records = generate_dataset(&scen, scen.n, cfg.seed)?;
    Ok((
        format!("preset:{}", cfg.preset.map(|p| p.name()).unwrap_or_default()),
        Dataset::new(records),
    ))
}

/// Validates the data and runs the full pipeline once per requested weight
/// mode. Nothing is written; see [`run_estimate`].
pub fn estimate_report(cfg: &RunConfig) -> Result<EstimateReport, HarnessError> {
    cfg.validate()?;
    let (tl, spec) = cfg.analysis_model()?;
    tl.validate()?;
    spec.validate(Some(tl.t_analysis))?;
    let (source, data) = load(cfg)?;
    validate_dataset(&data.records, &tl).map_err(|vs| {
        HarnessError::InvalidData(
            vs.iter()
                .map(|(i, v)| format!("record {} (line {}): {v}", i, i + 2))
                .collect(),
        )
    })?;
    let opts = EstimateOptions {
        solver: SolverOptions {
            alpha: cfg.alpha,
            taus: cfg.taus.clone(),
            ..SolverOptions::default()
        },
        ..EstimateOptions::default()
    };
    let modes = cfg.weights.modes();
    cfg.install(|| {
        let nuisance = if modes.contains(&WeightMode::Estimated) {
            info!("fitting nuisance models on {} participants", data.records.len());
            Some(
                NuisanceFit::fit(&data.records, &tl, &opts.nuisance)
                    .map_err(crate::estimator::EstimationError::from)?,
            )
        } else {
            None
        };
        let mut runs = Vec::new();
        for &mode in &modes {
            let fit = (mode == WeightMode::Estimated).then(|| nuisance.clone()).flatten();
            let est = estimate_with(&data.records, &tl, &spec, fit, mode, &opts)?;
            let bootstrap = match cfg.bootstrap {
                Some(b) => {
                    info!("bootstrap with {b} resamples ({mode} weights)");
                    Some(bootstrap_cov(&data.records, &tl, &spec, mode, &opts, b, cfg.seed)?)
                }
                None => None,
            };
            runs.push(EstimateRun {
                weight_mode: mode,
                result: est.result,
                diagnostics: est.diagnostics,
                bootstrap,
            });
        }
        Ok(EstimateReport {
            data_source: source,
            n: data.records.len(),
            covariate_names: data.covariate_names.clone(),
            runs,
            nuisance,
        })
    })?
}

/// Runs [`estimate_report`] and writes `result.json`, `result.txt`,
/// `weights_diag.csv` and, with estimated weights, `nuisance.json` to
/// `cfg.out`.
pub fn run_estimate(cfg: &RunConfig) -> Result<EstimateReport, HarnessError> {
    let report = estimate_report(cfg)?;
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join("result.json"), &report)?;
    write_file(&out.join("result.txt"), &render_report(&report))?;
    write_diagnostics(&out.join("weights_diag.csv"), &report)?;
    if let Some(fit) = &report.nuisance {
        write_json(&out.join("nuisance.json"), fit)?;
    }
    Ok(report)
}

/// Simulates one dataset from the preset and writes `dataset.csv` and the
/// resolved `scenario.json` to `cfg.out`.
pub fn run_simulate(cfg: &RunConfig) -> Result<PathBuf, HarnessError> {
    cfg.validate()?;
    let scen = cfg
        .scenario_config()?
        .ok_or_else(|| HarnessError::Config("simulate needs a `preset`".into()))?;
    let records = cfg.install(|| generate_dataset(&scen, scen.n, cfg.seed))??;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let path = cfg.out.join("dataset.csv");
    write_records_path(&path, &Dataset::new(records))?;
    write_json(&cfg.out.join("scenario.json"), &scen)?;
    Ok(path)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_file(path, &(text + "\n"))
}

#[derive(Clone, Serialize)]
struct DiagRow {
    weight_mode: WeightMode,
    process: String,
    n_exposures: usize,
    min: Option<f64>,
    max: Option<f64>,
    mean: Option<f64>,
    ess: f64,
    rank: Option<usize>,
    participant: Option<usize>,
    weight: Option<f64>,
}

/// One row per process with its summary, followed by one row per listed
/// large weight (`rank` from 1).
fn write_diagnostics(path: &Path, report: &EstimateReport) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Data(e.into()))?;
    for run in &report.runs {
        for d in &run.diagnostics {
            let base = DiagRow {
                weight_mode: run.weight_mode,
                process: format!("{:?}", d.process),
                n_exposures: d.n_exposures,
                min: d.min,
                max: d.max,
                mean: d.mean,
                ess: d.ess,
                rank: None,
                participant: None,
                weight: None,
            };
            let rows = std::iter::once((None, None, None)).chain(
                d.largest
                    .iter()
                    .enumerate()
                    .map(|(r, &(i, wt))| (Some(r + 1), Some(i), Some(wt))),
            );
            for (rank, participant, weight) in rows {
                w.serialize(DiagRow {
                    rank,
                    participant,
                    weight,
                    ..base.clone()
                })
                .map_err(|e| HarnessError::Data(e.into()))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

/// Human-readable report of an estimation run.
pub fn render_report(report: &EstimateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Data: {} ({} participants)", report.data_source, report.n);
    for run in &report.runs {
        let r = &run.result;
        let d1 = r.theta_hat.theta1.len();
        let _ = writeln!(
            s,
            "\nWeights: {}  (converged: {}, {} iterations, blinded infections {}, unblinded infections {})",
            run.weight_mode, r.converged, r.iterations, r.n_jumps_blinded, r.n_jumps_unblinded
        );
        let _ = writeln!(s, "{:<12}{:>10}{:>10}{:>10}", "Parameter", "Estimate", "SE", "Boot SE");
        for (k, v) in r.theta_hat.to_vec().iter().enumerate() {
            let boot = run
                .bootstrap
                .as_ref()
                .map(|b| format!("{:>10.4}", b.se[k]))
                .unwrap_or_else(|| format!("{:>10}", "-"));
            let _ = writeln!(s, "{:<12}{:>10.4}{:>10.4}{boot}", coordinate_name(k, d1), v, r.se[k]);
        }
        let _ = writeln!(s, "{:<14}{:>8}{:>8}{:>10}{:>10}", "VE", "tau", "VE", "95% lo", "95% hi");
        for v in &r.ve_estimates {
            let _ = writeln!(
                s,
                "{:<14}{:>8.1}{:>8.3}{:>10.3}{:>10.3}",
                v.label, v.tau, v.ve, v.ci_lower, v.ci_upper
            );
        }
        for t in &r.wald_waning {
            let _ = writeln!(
                s,
                "Waning test {} > 0: z = {:.3}, p = {:.4}, {} at alpha = {}",
                coordinate_name(t.coordinate + 1, d1),
                t.statistic,
                t.p_value,
                if t.reject { "reject" } else { "do not reject" },
                t.alpha
            );
        }
        let _ = writeln!(
            s,
            "{:<20}{:>10}{:>10}{:>10}{:>12}",
            "Weights by process", "n", "max", "mean", "Kish ESS"
        );
        for d in &run.diagnostics {
            let f = |x: Option<f64>| {
                x.map(|v| format!("{v:>10.3}"))
                    .unwrap_or_else(|| format!("{:>10}", "-"))
            };
            let _ = writeln!(
                s,
                "{:<20}{:>10}{}{}{:>12.1}",
                format!("{:?}", d.process),
                d.n_exposures,
                f(d.max),
                f(d.mean),
                d.ess
            );
        }
    }
    s
}
