use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Newton-Raphson settings shared by the Cox and logistic fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Convergence threshold on the max-norm of the gradient.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50,
            max_halvings: 30,
        }
    }
}

pub(crate) struct Objective {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Negative Hessian.
    pub information: DMatrix<f64>,
}

pub(crate) struct NewtonOutcome {
    pub beta: DVector<f64>,
    pub objective: Objective,
    pub iterations: usize,
}

pub(crate) enum NewtonFailure {
    Singular,
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },
    /// The objective keeps increasing along this coordinate without bound.
    Diverging {
        coordinate: usize,
    },
}

pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Maximises a concave objective from zero with step-halving.
///
/// `scales` are the spreads of the design columns; a final Newton step that
/// still moves a coordinate by more than 1e-3 spreads after the gradient has
/// vanished means the maximum sits at infinity.
pub(crate) fn maximize<F>(
    dim: usize,
    scales: &[f64],
    opts: &NewtonOptions,
    eval: F,
) -> Result<NewtonOutcome, NewtonFailure>
where
    F: Fn(&DVector<f64>) -> Objective,
{
    let mut beta = DVector::zeros(dim);
    let mut obj = eval(&beta);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        if obj.gradient.amax() < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let step = solve_spd(&obj.information, &obj.gradient).ok_or(NewtonFailure::Singular)?;
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_obj = eval(&candidate);
        let mut halvings = 0;
        while !(cand_obj.value.is_finite() && cand_obj.value >= obj.value - 1e-12 * obj.value.abs())
            && halvings < opts.max_halvings
        {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_obj = eval(&candidate);
            halvings += 1;
        }
        beta = candidate;
        obj = cand_obj;
        iterations += 1;
    }

    let final_step = solve_spd(&obj.information, &obj.gradient);
    match final_step {
        Some(step) => {
            if let Some((coordinate, _)) = step
                .iter()
                .zip(scales)
                .enumerate()
                .map(|(k, (s, sc))| (k, s.abs() * sc))
                .filter(|(_, v)| *v > 1e-3)
                .max_by(|a, b| a.1.total_cmp(&b.1))
            {
                return Err(NewtonFailure::Diverging { coordinate });
            }
        }
        None if converged => {}
        None => return Err(NewtonFailure::Singular),
    }
    if !converged {
        return Err(NewtonFailure::NonConvergence {
            iterations,
            gradient_norm: obj.gradient.amax(),
        });
    }
    Ok(NewtonOutcome {
        beta,
        objective: obj,
        iterations,
    })
}

/// Population standard deviation of each column, with 1 for constant columns.
pub(crate) fn column_scales(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = rows.len().max(1) as f64;
    (0..dim)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}
