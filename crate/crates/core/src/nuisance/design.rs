use serde::{Deserialize, Serialize};

use crate::model::{Arm, Gamma};

/// One column of a nuisance-model design row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Covariate(usize),
    Arm,
    CovariateByArm(usize),
    /// Indicator of Γ equal to the given code.
    Stratum(u8),
    CovariateByStratum(u8, usize),
}

/// Ordered list of columns making up a design row from `(X, A, Γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub terms: Vec<Term>,
}

impl DesignSpec {
    /// `X₁..X_k`.
    pub fn covariates(k: usize) -> Self {
        Self {
            terms: (0..k).map(Term::Covariate).collect(),
        }
    }

    /// `X, A, X·A`: the requested-unblinding hazard may depend on arm.
    pub fn covariates_arm_interaction(k: usize) -> Self {
        let mut terms: Vec<Term> = (0..k).map(Term::Covariate).collect();
        terms.push(Term::Arm);
        terms.extend((0..k).map(Term::CovariateByArm));
        Self { terms }
    }

    /// Separate intercept and covariate slopes within the Γ=1 and Γ=2 strata.
    pub fn stratified_by_gamma(k: usize) -> Self {
        let mut terms = Vec::with_capacity(2 * (k + 1));
        for g in [1u8, 2] {
            terms.push(Term::Stratum(g));
            terms.extend((0..k).map(|j| Term::CovariateByStratum(g, j)));
        }
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn row(&self, x: &[f64], arm: Arm, gamma: Gamma) -> Vec<f64> {
        let a = arm.indicator();
        let in_stratum = |g: u8| if gamma.code() == g { 1.0 } else { 0.0 };
        self.terms
            .iter()
            .map(|term| match *term {
                Term::Intercept => 1.0,
                Term::Covariate(j) => x[j],
                Term::Arm => a,
                Term::CovariateByArm(j) => x[j] * a,
                Term::Stratum(g) => in_stratum(g),
                Term::CovariateByStratum(g, j) => x[j] * in_stratum(g),
            })
            .collect()
    }

    /// Largest covariate index referenced, plus one.
    pub fn covariate_dim(&self) -> usize {
        self.terms
            .iter()
            .filter_map(|t| match *t {
                Term::Covariate(j) | Term::CovariateByArm(j) | Term::CovariateByStratum(_, j) => Some(j + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows() {
        let x = [1.0, 40.0];
        let d = DesignSpec::covariates_arm_interaction(2);
        assert_eq!(
            d.row(&x, Arm::Vaccine, Gamma::Infection),
            vec![1.0, 40.0, 1.0, 1.0, 40.0]
        );
        assert_eq!(
            d.row(&x, Arm::Placebo, Gamma::Infection),
            vec![1.0, 40.0, 0.0, 0.0, 0.0]
        );
        let s = DesignSpec::stratified_by_gamma(2);
        assert_eq!(
            s.row(&x, Arm::Placebo, Gamma::Pdcv),
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 40.0]
        );
        assert_eq!(s.covariate_dim(), 2);
    }
}
