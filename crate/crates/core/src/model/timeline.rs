use serde::{Deserialize, Serialize};

use super::ModelError;

/// Calendar milestones of the trial, all in weeks from trial start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialTimeline {
    /// Full accrual reached.
    pub t_accrual: f64,
    /// First competing vaccine authorised; requested unblinding opens.
    pub t_pfizer: f64,
    /// Scheduled participant-decision visits (PDCVs) begin.
    pub t_pdcv_start: f64,
    /// All PDCVs have taken place.
    pub t_pdcv_end: f64,
    /// Analysis time.
    pub t_analysis: f64,
    /// Weeks from first dose to full efficacy.
    pub lag: f64,
    /// Probability of randomisation to vaccine.
    pub p_assign: f64,
}

impl Default for TrialTimeline {
    fn default() -> Self {
        Self {
            t_accrual: 12.0,
            t_pfizer: 19.0,
            t_pdcv_start: 21.0,
            t_pdcv_end: 31.0,
            t_analysis: 52.0,
            lag: 6.0,
            p_assign: 0.5,
        }
    }
}

impl TrialTimeline {
    pub fn new(
        t_accrual: f64,
        t_pfizer: f64,
        t_pdcv_start: f64,
        t_pdcv_end: f64,
        t_analysis: f64,
        lag: f64,
        p_assign: f64,
    ) -> Result<Self, ModelError> {
        let tl = Self {
            t_accrual,
            t_pfizer,
            t_pdcv_start,
            t_pdcv_end,
            t_analysis,
            lag,
            p_assign,
        };
        tl.validate()?;
        Ok(tl)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            self.t_accrual,
            self.t_pfizer,
            self.t_pdcv_start,
            self.t_pdcv_end,
            self.t_analysis,
            self.lag,
            self.p_assign,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidTimeline("non-finite milestone".into()));
        }
        if !(0.0 < self.t_accrual
            && self.t_accrual < self.t_pfizer
            && self.t_pfizer < self.t_pdcv_start
            && self.t_pdcv_start < self.t_pdcv_end
            && self.t_pdcv_end <= self.t_analysis)
        {
            return Err(ModelError::InvalidTimeline(
                "milestones must satisfy 0 < T_A < T_P < T_U < T_C <= L".into(),
            ));
        }
        if self.lag <= 0.0 || self.t_pfizer - self.t_accrual <= self.lag {
            return Err(ModelError::InvalidTimeline(format!(
                "lag must satisfy 0 < lag < T_P - T_A (lag={}, T_P - T_A={})",
                self.lag,
                self.t_pfizer - self.t_accrual
            )));
        }
        if !(0.0 < self.p_assign && self.p_assign < 1.0) {
            return Err(ModelError::InvalidTimeline(format!(
                "p_assign must lie in (0, 1), got {}",
                self.p_assign
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        TrialTimeline::default().validate().unwrap();
    }

    #[test]
    fn rejects_lag_reaching_past_pfizer() {
        let err = TrialTimeline::new(12.0, 19.0, 21.0, 31.0, 52.0, 7.0, 0.5).unwrap_err();
        assert!(matches!(err, ModelError::InvalidTimeline(_)));
    }

    #[test]
    fn rejects_unordered_milestones() {
        assert!(TrialTimeline::new(12.0, 21.0, 19.0, 31.0, 52.0, 6.0, 0.5).is_err());
        assert!(TrialTimeline::new(12.0, 19.0, 21.0, 31.0, 30.0, 6.0, 0.5).is_err());
        assert!(TrialTimeline::new(12.0, 19.0, 21.0, 31.0, 52.0, 6.0, 1.0).is_err());
    }
}
