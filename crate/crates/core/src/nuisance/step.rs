use serde::{Deserialize, Serialize};

/// Right-continuous nondecreasing step function starting at zero, stored as
/// jump times and the cumulative value after each jump.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl StepFunction {
    /// Builds from ascending distinct times and their increments.
    pub fn from_increments(times: Vec<f64>, increments: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = increments
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        Self { times, cumulative }
    }

    /// Value at `t` (jumps at `t` included).
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// Left limit at `t` (jumps at `t` excluded).
    pub fn eval_before(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s < t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    pub fn increment_at(&self, t: f64) -> f64 {
        self.eval(t) - self.eval_before(t)
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn increments(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let d = c - prev;
                prev = c;
                d
            })
            .collect()
    }
}
