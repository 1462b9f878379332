use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::estimator::WeightMode;
use crate::model::{TrialTimeline, WaningModelSpec};
use crate::sim::{ScenarioConfig, ScenarioOverrides, ScenarioPreset};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Estimate,
    Simulate,
    McStudy,
}

/// Which weightings to run; `Both` analyses every dataset twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSelection {
    Unit,
    #[default]
    Estimated,
    Both,
}

impl WeightSelection {
    pub fn modes(self) -> Vec<WeightMode> {
        match self {
            WeightSelection::Unit => vec![WeightMode::Unit],
            WeightSelection::Estimated => vec![WeightMode::Estimated],
            WeightSelection::Both => vec![WeightMode::Unit, WeightMode::Estimated],
        }
    }
}

impl std::str::FromStr for WeightSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" => Ok(Self::Unit),
            "estimated" => Ok(Self::Estimated),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown weights `{other}` (expected unit, estimated or both)")),
        }
    }
}

fn one() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_alpha() -> f64 {
    0.05
}
fn default_seed() -> u64 {
    20211
}
fn default_max_failure_rate() -> f64 {
    0.05
}

/// One run of the command-line driver, read from TOML or JSON.
///
/// Exactly one of `preset` (simulated data) and `data` (a CSV file) is set.
/// `scenario` overrides preset coefficients; `timeline` and `waning` describe
/// the analysis of CSV data and default to the standard timeline with a
/// single knot at 20 weeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    #[serde(default)]
    pub preset: Option<ScenarioPreset>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioOverrides,
    #[serde(default)]
    pub weights: WeightSelection,
    #[serde(default = "one")]
    pub reps: usize,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub timeline: Option<TrialTimeline>,
    #[serde(default)]
    pub waning: Option<WaningModelSpec>,
    /// Times since first dose for the VE table; one per waning segment when
    /// absent.
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
    /// Nonparametric bootstrap resamples for `estimate` runs.
    #[serde(default)]
    pub bootstrap: Option<usize>,
    /// Fraction of failed replications above which a study is aborted.
    #[serde(default = "default_max_failure_rate")]
    pub max_failure_rate: f64,
}

impl RunConfig {
    /// A config for `mode` on a preset, with every other field defaulted.
    pub fn for_preset(mode: RunMode, preset: ScenarioPreset) -> Self {
        Self {
            mode,
            preset: Some(preset),
            data: None,
            scenario: ScenarioOverrides::default(),
            weights: WeightSelection::default(),
            reps: 1,
            threads: None,
            out: default_out(),
            alpha: default_alpha(),
            seed: default_seed(),
            timeline: None,
            waning: None,
            taus: None,
            bootstrap: None,
            max_failure_rate: default_max_failure_rate(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Parse {
            path: PathBuf::from("<toml>"),
            message: e.to_string(),
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(s).map_err(|e| HarnessError::Parse {
            path: PathBuf::from("<json>"),
            message: e.to_string(),
        })
    }

    /// Reads a `.toml` or `.json` file. A relative `data` path is taken
    /// relative to the config file.
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        };
        let mut cfg = parsed.map_err(|e| match e {
            HarnessError::Parse { message, .. } => HarnessError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        if let (Some(data), Some(dir)) = (&cfg.data, path.parent()) {
            if data.is_relative() {
                cfg.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match (&self.preset, &self.data) {
            (Some(_), Some(_)) => return bad("set either `preset` or `data`, not both".into()),
            (None, None) => return bad("one of `preset` or `data` is required".into()),
            (None, Some(_)) if self.mode != RunMode::Estimate => {
                return bad(format!("{:?} mode needs a `preset`", self.mode))
            }
            _ => {}
        }
        if self.reps == 0 {
            return bad("`reps` must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("`threads` must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("`alpha` must lie in (0,1), got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad("`max_failure_rate` must lie in [0,1]".into());
        }
        if self.data.is_some() && self.scenario != ScenarioOverrides::default() {
            return bad("`scenario` overrides apply to presets only".into());
        }
        if self.preset.is_some() && (self.timeline.is_some() || self.waning.is_some()) {
            return bad("with a preset, set `timeline` and knots through `scenario`".into());
        }
        if self.bootstrap == Some(1) {
            return bad("`bootstrap` needs at least 2 resamples".into());
        }
        Ok(())
    }

    /// Preset with overrides applied.
    pub fn scenario_config(&self) -> Result<Option<ScenarioConfig>, HarnessError> {
        let Some(preset) = self.preset else { return Ok(None) };
        let mut cfg = ScenarioConfig::preset(preset);
        self.scenario.apply(&mut cfg);
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(Some(cfg))
    }

    /// Timeline and waning model used for estimation.
    pub fn analysis_model(&self) -> Result<(TrialTimeline, WaningModelSpec), HarnessError> {
        match self.scenario_config()? {
            Some(s) => Ok((s.timeline, s.waning)),
            None => Ok((
                self.timeline.unwrap_or_default(),
                self.waning
                    .clone()
                    .unwrap_or_else(|| WaningModelSpec::single_knot(20.0)),
            )),
        }
    }

    /// Runs `f` on a pool with the configured number of workers.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R, HarnessError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = self.threads {
            builder = builder.num_threads(t);
        }
        let pool = builder.build().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(pool.install(f))
    }
}
