use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimator::WeightMode;

use super::run::{write_file, write_json};
use super::study::{EstimandSummary, ModeSummary, MonteCarloSummary, ReplicationOutcome, TestSummary};
use super::{io_err, HarnessError};

/// JSON Schema for `summary.json`.
pub const SUMMARY_SCHEMA: &str = include_str!("../../schemas/summary.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Text => "txt",
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown table format `{other}`")),
        }
    }
}

/// One line of `summary.csv`. Study-level fields repeat on every row so the
/// file is self-describing and reads back into the same summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub preset: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub weight_mode: WeightMode,
    pub completed: usize,
    pub failures: usize,
    /// `estimand` or `test`.
    pub kind: String,
    pub name: String,
    pub truth: f64,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub sd: Option<f64>,
    pub se: Option<f64>,
    pub coverage: Option<f64>,
    pub rejection_rate: Option<f64>,
    pub type_i_error: Option<f64>,
}

impl MonteCarloSummary {
    pub fn to_rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for b in &self.blocks {
            let row = |kind: &str, name: &str, truth: f64| SummaryRow {
                preset: self.preset.clone(),
                n: self.n,
                reps: self.reps,
                seed: self.seed,
                alpha: self.alpha,
                weight_mode: b.weight_mode,
                completed: b.completed,
                failures: b.failures,
                kind: kind.into(),
                name: name.into(),
                truth,
                mean: None,
                median: None,
                sd: None,
                se: None,
                coverage: None,
                rejection_rate: None,
                type_i_error: None,
            };
            for e in &b.estimands {
                rows.push(SummaryRow {
                    mean: Some(e.mean),
                    median: Some(e.median),
                    sd: e.sd,
                    se: Some(e.mean_se),
                    coverage: Some(e.coverage),
                    ..row("estimand", &e.name, e.truth)
                });
            }
            for t in &b.tests {
                rows.push(SummaryRow {
                    rejection_rate: Some(t.rejection_rate),
                    type_i_error: t.type_i_error,
                    ..row("test", &t.name, t.truth)
                });
            }
        }
        rows
    }

    /// Inverse of [`MonteCarloSummary::to_rows`]; blocks keep their row order.
    pub fn from_rows(rows: &[SummaryRow]) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Parse {
            path: "summary.csv".into(),
            message: m,
        };
        let first = rows.first().ok_or_else(|| bad("no rows".into()))?;
        let mut blocks: Vec<ModeSummary> = Vec::new();
        for r in rows {
            if (&r.preset, r.n, r.reps, r.seed, r.alpha)
                != (&first.preset, first.n, first.reps, first.seed, first.alpha)
            {
                return Err(bad(format!("row `{}` disagrees on study fields", r.name)));
            }
            if blocks.last().map(|b| b.weight_mode) != Some(r.weight_mode) {
                blocks.push(ModeSummary {
                    weight_mode: r.weight_mode,
                    completed: r.completed,
                    failures: r.failures,
                    estimands: Vec::new(),
                    tests: Vec::new(),
                });
            }
            let b = blocks.last_mut().expect("pushed above");
            let need = |v: Option<f64>, f: &str| v.ok_or_else(|| bad(format!("row `{}` lacks {f}", r.name)));
            match r.kind.as_str() {
                "estimand" => b.estimands.push(EstimandSummary {
                    name: r.name.clone(),
                    truth: r.truth,
                    mean: need(r.mean, "mean")?,
                    median: need(r.median, "median")?,
                    sd: r.sd,
                    mean_se: need(r.se, "se")?,
                    coverage: need(r.coverage, "coverage")?,
                }),
                "test" => b.tests.push(TestSummary {
                    name: r.name.clone(),
                    truth: r.truth,
                    alpha: r.alpha,
                    rejection_rate: need(r.rejection_rate, "rejection_rate")?,
                    type_i_error: r.type_i_error,
                }),
                other => return Err(bad(format!("unknown row kind `{other}`"))),
            }
        }
        Ok(MonteCarloSummary {
            preset: first.preset.clone(),
            n: first.n,
            reps: first.reps,
            seed: first.seed,
            alpha: first.alpha,
            blocks,
        })
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.to_rows() {
            w.serialize(r).map_err(|e| HarnessError::Data(e.into()))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let rows = csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<Vec<SummaryRow>, _>>()
            .map_err(|e| HarnessError::Data(e.into()))?;
        Self::from_rows(&rows)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:>8.3}")).unwrap_or_else(|| format!("{:>8}", "-"))
}

/// Table with columns Truth, Mean, Med, SD, SE and Cov per estimand, one
/// block per weight mode, followed by the waning-test rejection rates.
pub fn render_text(s: &MonteCarloSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Scenario {}: n = {}, {} replications, seed {}",
        s.preset, s.n, s.reps, s.seed
    );
    let _ = writeln!(
        out,
        "Mean/Med/SD of estimates, SE = mean standard error, Cov = coverage of nominal 95% intervals"
    );
    for b in &s.blocks {
        let _ = writeln!(
            out,
            "\n{} weights ({} completed, {} failed)",
            b.weight_mode, b.completed, b.failures
        );
        let _ = writeln!(
            out,
            "{:<12}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}",
            "", "Truth", "Mean", "Med", "SD", "SE", "Cov"
        );
        for e in &b.estimands {
            let _ = writeln!(
                out,
                "{:<12}{}{}{}{}{}{}",
                e.name,
                cell(Some(e.truth)),
                cell(Some(e.mean)),
                cell(Some(e.median)),
                cell(e.sd),
                cell(Some(e.mean_se)),
                cell(Some(e.coverage))
            );
        }
        for t in &b.tests {
            let _ = write!(
                out,
                "One-sided waning test on {} at level {}: rejection rate {:.3}",
                t.name, t.alpha, t.rejection_rate
            );
            match t.type_i_error {
                Some(e) => {
                    let _ = writeln!(out, " (Type I error {e:.3})");
                }
                None => out.push('\n'),
            }
        }
    }
    out
}

/// Writes `summary.<ext>` in `dir`.
pub fn emit_table(
    summary: &MonteCarloSummary,
    format: TableFormat,
    dir: &Path,
) -> Result<std::path::PathBuf, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(format!("summary.{}", format.extension()));
    match format {
        TableFormat::Text => write_file(&path, &render_text(summary))?,
        TableFormat::Csv => write_file(&path, &summary.to_csv()?)?,
        TableFormat::Json => write_json(&path, summary)?,
    }
    Ok(path)
}

#[derive(Serialize)]
struct ReplicationRow<'a> {
    rep: usize,
    seed: u64,
    weight_mode: WeightMode,
    status: &'static str,
    iterations: Option<usize>,
    theta: String,
    se: String,
    ve: String,
    reject: String,
    failure: Option<&'a str>,
}

fn join(v: impl Iterator<Item = String>) -> String {
    v.collect::<Vec<_>>().join(";")
}

/// One row per replication and weight mode; vector fields are
/// `;`-separated in θ order (θ₀ first) and VE table order.
pub fn write_replications(path: &Path, reps: &[ReplicationOutcome]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Data(e.into()))?;
    for r in reps {
        let e = r.estimate.as_ref();
        let row = ReplicationRow {
            rep: r.rep,
            seed: r.seed,
            weight_mode: r.weight_mode,
            status: if e.is_some() { "ok" } else { "failed" },
            iterations: e.map(|e| e.iterations),
            theta: e.map(|e| join(e.theta.iter().map(f64::to_string))).unwrap_or_default(),
            se: e.map(|e| join(e.se.iter().map(f64::to_string))).unwrap_or_default(),
            ve: e
                .map(|e| join(e.ve.iter().map(|v| v.ve.to_string())))
                .unwrap_or_default(),
            reject: e
                .map(|e| join(e.tests.iter().map(|t| u8::from(t.reject).to_string())))
                .unwrap_or_default(),
            failure: r.failure.as_deref(),
        };
        w.serialize(row).map_err(|e| HarnessError::Data(e.into()))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn summary_from(vals: &[f64], sd_present: bool, type_i: bool) -> MonteCarloSummary {
        let est = |name: &str, k: usize| EstimandSummary {
            name: name.into(),
            truth: vals[k],
            mean: vals[k + 1],
            median: vals[k + 2],
            sd: sd_present.then_some(vals[k + 3]),
            mean_se: vals[k + 4],
            coverage: vals[k + 5].abs().fract(),
        };
        let block = |mode, off: usize| ModeSummary {
            weight_mode: mode,
            completed: 97,
            failures: 3,
            estimands: vec![
                est("θ₁", off),
                est("VE<=20", off + 1),
                est("VE>20", off + 2),
                est("θ₀", off + 3),
            ],
            tests: vec![TestSummary {
                name: "θ₁".into(),
                truth: 0.0,
                alpha: 0.05,
                rejection_rate: vals[off].abs().fract(),
                type_i_error: type_i.then(|| vals[off].abs().fract()),
            }],
        };
        MonteCarloSummary {
            preset: "ii-b-strong".into(),
            n: 30_000,
            reps: 100,
            seed: u64::MAX,
            alpha: 0.05,
            blocks: vec![block(WeightMode::Unit, 0), block(WeightMode::Estimated, 2)],
        }
    }

    proptest! {
        #[test]
        fn csv_round_trips_losslessly(vals in prop::collection::vec(-1e6f64..1e6, 12), sd in any::<bool>(), ti in any::<bool>()) {
            let s = summary_from(&vals, sd, ti);
            let back = MonteCarloSummary::from_csv(&s.to_csv().unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn json_round_trips_losslessly(vals in prop::collection::vec(-1e6f64..1e6, 12)) {
            let s = summary_from(&vals, true, false);
            let back: MonteCarloSummary = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }
    }

    #[test]
    fn text_table_has_table_columns_per_mode() {
        let vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let t = render_text(&summary_from(&vals, false, true));
        for col in ["Truth", "Mean", "Med", "SD", "SE", "Cov"] {
            assert!(t.contains(col));
        }
        assert!(t.contains("unit weights (97 completed, 3 failed)"));
        assert!(t.contains("estimated weights"));
        assert!(t.contains("Type I error"));
    }

    #[test]
    fn emit_table_writes_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let s = summary_from(&[0.5; 12], true, true);
        for f in [TableFormat::Text, TableFormat::Csv, TableFormat::Json] {
            let p = emit_table(&s, f, dir.path()).unwrap();
            assert!(std::fs::metadata(p).unwrap().len() > 0);
        }
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(MonteCarloSummary::from_csv(&csv).unwrap(), s);
    }
}
