use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::design::DesignSpec;
use super::newton::{self, NewtonFailure, NewtonOptions, Objective};
use super::NuisanceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub design: DesignSpec,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub log_likelihood: f64,
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(c, x)| c * x).sum()
    }

    pub fn prob(&self, row: &[f64]) -> f64 {
        expit(self.linear_predictor(row))
    }

    pub fn zero_coefficients(&self) -> Self {
        Self {
            coefficients: vec![0.0; self.coefficients.len()],
            ..self.clone()
        }
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^η)` without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn evaluate(y: &[bool], rows: &[Vec<f64>], beta: &DVector<f64>) -> Objective {
    let p = beta.len();
    let mut value = 0.0;
    let mut gradient = DVector::zeros(p);
    let mut information = DMatrix::zeros(p, p);
    for (yi, x) in y.iter().zip(rows) {
        let eta: f64 = x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let mu = expit(eta);
        let yv = if *yi { 1.0 } else { 0.0 };
        value += yv * eta - softplus(eta);
        let v = mu * (1.0 - mu);
        for a in 0..p {
            gradient[a] += (yv - mu) * x[a];
            for b in 0..p {
                information[(a, b)] += v * x[a] * x[b];
            }
        }
    }
    Objective {
        value,
        gradient,
        information,
    }
}

/// Maximum likelihood logistic regression on pre-built design rows (no
/// implicit intercept).
pub fn fit_logistic(
    y: &[bool],
    rows: &[Vec<f64>],
    design: DesignSpec,
    opts: &NewtonOptions,
) -> Result<LogisticFit, NuisanceError> {
    if y.is_empty() {
        return Err(NuisanceError::NoRows);
    }
    let p = rows[0].len();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for x in rows {
        let v = DVector::from_column_slice(x);
        gram += &v * v.transpose();
    }
    if p > 0 {
        let eig = SymmetricEigen::new(gram).eigenvalues;
        let max = eig.amax();
        if max == 0.0 || eig.min() <= 1e-12 * max {
            return Err(NuisanceError::RankDeficient);
        }
    }
    let scales = newton::column_scales(rows, p)
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            // Indicator-like columns use their root mean square instead of
            // the spread, so intercepts are still checked.
            let rms = (rows.iter().map(|r| r[j] * r[j]).sum::<f64>() / rows.len() as f64).sqrt();
            s.max(rms.min(1.0))
        })
        .collect::<Vec<_>>();
    let outcome = newton::maximize(p, &scales, opts, |b| evaluate(y, rows, b)).map_err(|f| match f {
        NewtonFailure::Singular => NuisanceError::Singular,
        NewtonFailure::NonConvergence {
            iterations,
            gradient_norm,
        } => NuisanceError::NonConvergence {
            iterations,
            gradient_norm,
        },
        NewtonFailure::Diverging { coordinate } => NuisanceError::Separation {
            coefficient: coordinate,
        },
    })?;
    Ok(LogisticFit {
        coefficients: outcome.beta.iter().copied().collect(),
        design,
        iterations: outcome.iterations,
        gradient_norm: outcome.objective.gradient.amax(),
        log_likelihood: outcome.objective.value,
    })
}
