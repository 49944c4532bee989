//! Fixed-width inputs for the assignment network: subject covariates followed by
//! summary statistics of the events seen in the first `tau` time units.

use crate::data::{SubjectRecord, Time};
use crate::matrix::Matrix;

/// Number of event statistics appended after the covariates.
pub const EVENT_STATS: usize = 6;

/// `covariates ++ [count, mean, variance, min, max, last_event_time]` over the
/// inter-event times of events falling in `[joining_time, joining_time + tau]`.
///
/// The variance is the population variance and the last event time is relative
/// to joining. An empty window yields zeros.
pub fn extract_features(subject: &SubjectRecord, tau: Time) -> Vec<f64> {
    let mut out = Vec::with_capacity(subject.covariates.len() + EVENT_STATS);
    out.extend_from_slice(&subject.covariates);
    let mut elapsed: u64 = 0;
    let mut gaps = Vec::new();
    for &gap in &subject.inter_event_times {
        elapsed += u64::from(gap);
        if elapsed > u64::from(tau) {
            break;
        }
        gaps.push(f64::from(gap));
    }
    if gaps.is_empty() {
        out.extend([0.0; EVENT_STATS]);
        return out;
    }
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last = gaps.iter().sum::<f64>();
    out.extend([n, mean, var, min, max, last]);
    out
}

pub fn feature_matrix(subjects: &[SubjectRecord], tau: Time) -> Matrix {
    let rows: Vec<Vec<f64>> = subjects.iter().map(|s| extract_features(s, tau)).collect();
    if rows.is_empty() {
        return Matrix::zeros(0, 0);
    }
    Matrix::from_rows(&rows).expect("subjects share a covariate width")
}

/// Per-column affine standardization fitted on training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get unit scale.
    pub fn fit(x: &Matrix) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        if n == 0 {
            return Self { mean, scale };
        }
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for (c, s) in scale.iter_mut().enumerate() {
            let var = (0..n).map(|r| (x[(r, c)] - mean[c]).powi(2)).sum::<f64>() / n as f64;
            if var > 1e-24 {
                *s = var.sqrt();
            }
        }
        Self { mean, scale }
    }

    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}
