//! Probability that a subject's last observed event was terminal.

use crate::data::{Dataset, SubjectRecord, Time};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminationModel {
    /// Use the recorded flag on the last event.
    ObservedSignals,
    /// `beta = 1 - exp(-xi * chi)` with a shared rate `xi = exp(log_rate)`.
    LearnableExponential { log_rate: f64 },
    /// `beta = 1[chi > window]`.
    FixedTimeout { window: Time },
}

impl TerminationModel {
    /// Learnable model whose `beta` equals one half at the median inactive period.
    pub fn learnable_for(data: &Dataset) -> Self {
        let mut chi = data.inactive_periods();
        chi.sort_unstable();
        let median = chi.get(chi.len() / 2).copied().unwrap_or(0).max(1);
        TerminationModel::LearnableExponential {
            log_rate: (std::f64::consts::LN_2 / f64::from(median)).ln(),
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, TerminationModel::LearnableExponential { .. })
    }

    pub fn probability(&self, subject: &SubjectRecord, chi: Time) -> Result<f64> {
        match *self {
            TerminationModel::ObservedSignals => subject
                .last_termination_flag()
                .map(|f| if f { 1.0 } else { 0.0 })
                .ok_or_else(|| Error::TerminationSignalsUnavailable {
                    id: subject.id.clone(),
                }),
            TerminationModel::LearnableExponential { log_rate } => {
                let rate = log_rate.exp();
                Ok(-(-rate * f64::from(chi)).exp_m1())
            }
            TerminationModel::FixedTimeout { window } => Ok(if chi > window { 1.0 } else { 0.0 }),
        }
    }

    /// `d beta / d log_rate`; zero for the non-learnable variants.
    pub fn probability_grad(&self, chi: Time) -> f64 {
        match *self {
            TerminationModel::LearnableExponential { log_rate } => {
                let rate = log_rate.exp();
                let chi = f64::from(chi);
                rate * chi * (-rate * chi).exp()
            }
            _ => 0.0,
        }
    }

    /// Termination probabilities for every subject of `data`.
    pub fn probabilities(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.subjects
            .iter()
            .enumerate()
            .map(|(i, s)| self.probability(s, data.inactive_period(i)))
            .collect()
    }
}

/// Termination probability of subject `idx` inside `data`.
pub fn termination_probability(data: &Dataset, idx: usize, model: &TerminationModel) -> Result<f64> {
    model.probability(&data.subjects[idx], data.inactive_period(idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject() -> SubjectRecord {
        SubjectRecord::new("s", vec![], vec![3])
    }

    fn learnable(rate: f64) -> TerminationModel {
        TerminationModel::LearnableExponential {
            log_rate: rate.ln(),
        }
    }

    #[test]
    fn exponential_zero_inactivity() {
        assert_eq!(learnable(0.5).probability(&subject(), 0).unwrap(), 0.0);
    }

    #[test]
    fn exponential_closed_form() {
        let beta = learnable(0.5).probability(&subject(), 2).unwrap();
        assert!((beta - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((beta - 0.63212).abs() < 1e-5);
    }

    #[test]
    fn fixed_timeout_is_strict() {
        let m = TerminationModel::FixedTimeout { window: 10 };
        assert_eq!(m.probability(&subject(), 10).unwrap(), 0.0);
        assert_eq!(m.probability(&subject(), 11).unwrap(), 1.0);
    }

    #[test]
    fn observed_signals_require_flags() {
        let m = TerminationModel::ObservedSignals;
        let err = m.probability(&subject(), 4).unwrap_err();
        assert!(err.to_string().contains("termination signals unavailable"));
        let mut s = subject();
        s.termination_flags = Some(vec![true]);
        assert_eq!(m.probability(&s, 4).unwrap(), 1.0);
    }

    #[test]
    fn grad_matches_finite_difference() {
        let chi = 7;
        let log_rate = -1.3f64;
        let h = 1e-6;
        let f = |lr: f64| {
            TerminationModel::LearnableExponential { log_rate: lr }
                .probability(&subject(), chi)
                .unwrap()
        };
        let fd = (f(log_rate + h) - f(log_rate - h)) / (2.0 * h);
        let g = TerminationModel::LearnableExponential { log_rate }.probability_grad(chi);
        assert!((fd - g).abs() < 1e-8 * g.abs().max(1.0));
    }

    #[test]
    fn learnable_init_hits_one_half_at_median() {
        let subjects = [2u32, 5, 9]
            .iter()
            .enumerate()
            .map(|(i, &h)| SubjectRecord::new(i.to_string(), vec![], vec![h]))
            .collect();
        let data = Dataset::new(subjects, 20).unwrap();
        // chi = 18, 15, 11 -> median 15
        let m = TerminationModel::learnable_for(&data);
        let beta = m.probability(&data.subjects[1], 15).unwrap();
        assert!((beta - 0.5).abs() < 1e-12);
    }
}
