//! Cox proportional hazards fits with Breslow ties and Breslow baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::DesignSpec;
use super::newton::{self, NewtonFailure, NewtonOptions, Objective};
use super::step::StepFunction;
use super::NuisanceError;

/// One subject in a Cox fit. `event` marks a failure of the modelled type;
/// it only counts if `time` falls inside the fit window.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxRow {
    pub time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

/// Event-counting window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    #[serde(with = "crate::serde_extended_f64")]
    pub start: f64,
    #[serde(with = "crate::serde_extended_f64")]
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn unbounded() -> Self {
        Self {
            start: f64::NEG_INFINITY,
            end: f64::INFINITY,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    /// Covariate means subtracted before fitting; the baseline refers to
    /// covariates equal to `center`.
    pub center: Vec<f64>,
    pub baseline_cumhaz: StepFunction,
    pub design: DesignSpec,
    pub window: Window,
    pub iterations: usize,
    pub score_norm: f64,
    pub log_partial_likelihood: f64,
    pub n_events: usize,
}

impl CoxFit {
    /// `βᵀ(z − center)`.
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.beta
            .iter()
            .zip(row.iter().zip(&self.center))
            .map(|(b, (z, c))| b * (z - c))
            .sum()
    }

    pub fn relative_risk(&self, row: &[f64]) -> f64 {
        self.linear_predictor(row).exp()
    }

    /// `Λ₀(t)`, right-continuous.
    pub fn cumhaz(&self, t: f64) -> f64 {
        self.baseline_cumhaz.eval(t)
    }

    /// `Λ₀(t−)`.
    pub fn cumhaz_before(&self, t: f64) -> f64 {
        self.baseline_cumhaz.eval_before(t)
    }

    pub fn zero_coefficients(&self) -> Self {
        Self {
            beta: vec![0.0; self.beta.len()],
            ..self.clone()
        }
    }
}

struct Prepared {
    p: usize,
    /// Centered covariates, row-major.
    z: Vec<f64>,
    /// Subject indices by decreasing time.
    order: Vec<usize>,
    /// Distinct event times, decreasing, with their event subjects.
    events: Vec<(f64, Vec<usize>)>,
}

fn prepare(rows: &[CoxRow], window: Window) -> (Prepared, Vec<f64>) {
    let n = rows.len();
    let p = rows.first().map(|r| r.covariates.len()).unwrap_or(0);
    let mut center = vec![0.0; p];
    for r in rows {
        for (c, x) in center.iter_mut().zip(&r.covariates) {
            *c += x;
        }
    }
    for c in &mut center {
        *c /= n as f64;
    }
    let mut z = Vec::with_capacity(n * p);
    for r in rows {
        z.extend(r.covariates.iter().zip(&center).map(|(x, c)| x - c));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rows[b].time.total_cmp(&rows[a].time).then(a.cmp(&b)));

    let mut events: Vec<(f64, Vec<usize>)> = Vec::new();
    for &i in &order {
        let r = &rows[i];
        if r.event && window.contains(r.time) {
            match events.last_mut() {
                Some((t, members)) if *t == r.time => members.push(i),
                _ => events.push((r.time, vec![i])),
            }
        }
    }
    (Prepared { p, z, order, events }, center)
}

/// Log partial likelihood, score and information at `beta`; also returns
/// the risk-set sums S0 at each event time (same order as `events`).
fn evaluate(prep: &Prepared, rows: &[CoxRow], beta: &DVector<f64>) -> (Objective, Vec<f64>) {
    let p = prep.p;
    let row = |i: usize| &prep.z[i * p..(i + 1) * p];
    let lp = |i: usize| row(i).iter().zip(beta.iter()).map(|(z, b)| z * b).sum::<f64>();

    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut value = 0.0;
    let mut gradient = DVector::<f64>::zeros(p);
    let mut information = DMatrix::<f64>::zeros(p, p);
    let mut s0_at = Vec::with_capacity(prep.events.len());
    let mut next = 0;
    for (t, members) in &prep.events {
        while next < prep.order.len() && rows[prep.order[next]].time >= *t {
            let i = prep.order[next];
            let w = lp(i).exp();
            let zi = row(i);
            s0 += w;
            for a in 0..p {
                s1[a] += w * zi[a];
                for b in 0..p {
                    s2[(a, b)] += w * zi[a] * zi[b];
                }
            }
            next += 1;
        }
        let d = members.len() as f64;
        for &j in members {
            value += lp(j);
            for a in 0..p {
                gradient[a] += row(j)[a];
            }
        }
        value -= d * s0.ln();
        let mean = &s1 / s0;
        gradient -= &mean * d;
        information += (&s2 / s0 - &mean * mean.transpose()) * d;
        s0_at.push(s0);
    }
    (
        Objective {
            value,
            gradient,
            information,
        },
        s0_at,
    )
}

/// Maximises the Breslow partial likelihood over events in `window`.
///
/// Risk sets contain every subject with `time ≥ t`, regardless of window.
pub fn fit_cox(rows: &[CoxRow], window: Window, opts: &NewtonOptions) -> Result<CoxFit, NuisanceError> {
    let (prep, center) = prepare(rows, window);
    let n_events: usize = prep.events.iter().map(|(_, m)| m.len()).sum();
    if n_events == 0 {
        return Err(NuisanceError::NoEvents);
    }
    let p = prep.p;
    let z_rows: Vec<Vec<f64>> = (0..rows.len()).map(|i| prep.z[i * p..(i + 1) * p].to_vec()).collect();
    let scales = newton::column_scales(&z_rows, p);
    let outcome = newton::maximize(p, &scales, opts, |b| evaluate(&prep, rows, b).0).map_err(|f| match f {
        NewtonFailure::Singular => NuisanceError::Singular,
        NewtonFailure::NonConvergence {
            iterations,
            gradient_norm,
        } => NuisanceError::NonConvergence {
            iterations,
            gradient_norm,
        },
        NewtonFailure::Diverging { coordinate } => NuisanceError::MonotoneLikelihood {
            coefficient: coordinate,
        },
    })?;

    let (_, s0_at) = evaluate(&prep, rows, &outcome.beta);
    let mut times = Vec::with_capacity(prep.events.len());
    let mut increments = Vec::with_capacity(prep.events.len());
    for ((t, members), s0) in prep.events.iter().zip(&s0_at).rev() {
        times.push(*t);
        increments.push(members.len() as f64 / s0);
    }
    Ok(CoxFit {
        beta: outcome.beta.iter().copied().collect(),
        center,
        baseline_cumhaz: StepFunction::from_increments(times, &increments),
        design: DesignSpec::covariates(p),
        window,
        iterations: outcome.iterations,
        score_norm: outcome.objective.gradient.amax(),
        log_partial_likelihood: outcome.objective.value,
        n_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(time: f64, event: bool, x: &[f64]) -> CoxRow {
        CoxRow {
            time,
            event,
            covariates: x.to_vec(),
        }
    }

    /// Breslow log partial likelihood written out directly for one covariate.
    fn loglik_1d(rows: &[CoxRow], beta: f64) -> f64 {
        let mut ll = 0.0;
        for r in rows.iter().filter(|r| r.event) {
            let denom: f64 = rows
                .iter()
                .filter(|s| s.time >= r.time)
                .map(|s| (beta * s.covariates[0]).exp())
                .sum();
            ll += beta * r.covariates[0] - denom.ln();
        }
        ll
    }

    #[test]
    fn one_covariate_matches_grid_search() {
        let rows = vec![
            row(1.0, true, &[1.0]),
            row(2.0, true, &[0.0]),
            row(3.0, true, &[1.0]),
            row(4.0, false, &[0.0]),
            row(5.0, true, &[0.0]),
            row(6.0, true, &[1.0]),
        ];
        let fit = fit_cox(&rows, Window::unbounded(), &NewtonOptions::default()).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut b = -10.0;
        while b <= 10.0 {
            let ll = loglik_1d(&rows, b);
            if ll > best.0 {
                best = (ll, b);
            }
            b += 1e-4;
        }
        assert!((fit.beta[0] - best.1).abs() < 2e-4, "{} vs {}", fit.beta[0], best.1);
        assert!(fit.score_norm < 1e-8);
        assert_relative_eq!(
            fit.log_partial_likelihood,
            loglik_1d(&rows, fit.beta[0]),
            epsilon = 1e-10
        );
    }

    #[test]
    fn perfectly_ordered_pair_is_monotone() {
        // Events at t=1 (x=1) then t=2 (x=0): the score 1/(1+e^β) never vanishes.
        let rows = vec![row(1.0, true, &[1.0]), row(2.0, true, &[0.0])];
        let err = fit_cox(&rows, Window::unbounded(), &NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, NuisanceError::MonotoneLikelihood { coefficient: 0 }));
        assert!(err.to_string().contains("monotone likelihood"));
    }

    #[test]
    fn events_only_in_one_group_is_monotone() {
        let mut rows: Vec<CoxRow> = (1..=5).map(|k| row(k as f64, true, &[1.0])).collect();
        rows.extend((0..5).map(|k| row(10.0 + k as f64, false, &[0.0])));
        assert!(matches!(
            fit_cox(&rows, Window::unbounded(), &NewtonOptions::default()),
            Err(NuisanceError::MonotoneLikelihood { .. })
        ));
    }

    #[test]
    fn zero_covariates_give_nelson_aalen() {
        let times = [3.0, 1.0, 2.0, 2.0, 5.0, 4.0];
        let events = [true, true, true, false, true, false];
        let rows: Vec<CoxRow> = times.iter().zip(events).map(|(&t, e)| row(t, e, &[0.0, 0.0])).collect();
        let fit = fit_cox(&rows, Window::unbounded(), &NewtonOptions::default()).unwrap();
        assert_eq!(fit.beta, vec![0.0, 0.0]);
        // at risk: t=1:6, t=2:5 (one event), t=3:3, t=5:1
        let na = [1.0 / 6.0, 1.0 / 5.0, 1.0 / 3.0, 1.0];
        assert_eq!(fit.baseline_cumhaz.times, vec![1.0, 2.0, 3.0, 5.0]);
        for (inc, want) in fit.baseline_cumhaz.increments().iter().zip(na) {
            assert_relative_eq!(*inc, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn window_restricts_events_not_risk_sets() {
        let rows = vec![row(1.0, true, &[0.0]), row(2.0, true, &[0.0]), row(3.0, true, &[0.0])];
        let fit = fit_cox(&rows, Window::new(1.5, 2.5), &NewtonOptions::default()).unwrap();
        assert_eq!(fit.baseline_cumhaz.times, vec![2.0]);
        assert_relative_eq!(fit.baseline_cumhaz.total(), 0.5);
        assert!(matches!(
            fit_cox(&rows, Window::new(5.0, 6.0), &NewtonOptions::default()),
            Err(NuisanceError::NoEvents)
        ));
    }

    #[test]
    fn breslow_ties() {
        // Two tied events: d/S0 with the whole tie set at risk.
        let rows = vec![
            row(1.0, true, &[1.0]),
            row(1.0, true, &[0.0]),
            row(2.0, true, &[1.0]),
            row(3.0, false, &[0.0]),
            row(2.5, true, &[0.0]),
        ];
        let fit = fit_cox(&rows, Window::unbounded(), &NewtonOptions::default()).unwrap();
        let b = fit.beta[0];
        let h = 1e-6;
        let grad = (loglik_1d(&rows, b + h) - loglik_1d(&rows, b - h)) / (2.0 * h);
        assert!(grad.abs() < 1e-6);
        let xbar = 0.4;
        let s0_first: f64 = rows.iter().map(|r| (b * (r.covariates[0] - xbar)).exp()).sum();
        assert_relative_eq!(fit.baseline_cumhaz.cumulative[0], 2.0 / s0_first, epsilon = 1e-12);
    }
}
