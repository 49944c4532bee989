//! Kaplan-Meier estimation under soft cluster memberships and probabilistic
//! termination.
//!
//! For cluster `k` the at-risk mass and the terminal mass at time `j` are
//!
//! ```text
//! s_k[j] = sum_u 1[H_u >= j] * alpha_k[u]
//! d_k[j] = sum_u 1[H_u == j] * beta[u] * alpha_k[u]
//! ```
//!
//! and the curve is the product limit `S_k[t] = prod_{j<=t} (s_k[j] - d_k[j]) / s_k[j]`.
//! A time with no mass at risk contributes a factor of one.

use crate::data::{Dataset, Time};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Discrete survival curve over `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLifetimeDistribution {
    pub values: Vec<f64>,
    /// Expected cluster size `sum_u alpha_k[u]`.
    pub effective_n: f64,
    /// Set when the cluster received no membership mass at all.
    pub degenerate: bool,
}

impl EmpiricalLifetimeDistribution {
    pub fn new(values: Vec<f64>, effective_n: f64) -> Self {
        Self {
            values,
            effective_n,
            degenerate: effective_n == 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Area under the curve over `0..=t_max` (restricted mean survival).
    pub fn restricted_mean(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Smallest `t` with `S[t] <= 0.5`.
    pub fn median(&self) -> Option<usize> {
        self.values.iter().position(|&s| s <= 0.5)
    }
}

/// Reverse-mode record of one cluster's product-limit evaluation.
#[derive(Debug, Clone)]
struct ClusterTape {
    at_risk: Vec<f64>,
    terminal: Vec<f64>,
    factors: Vec<f64>,
    values: Vec<f64>,
}

fn check_unit_interval(what: &'static str, xs: &[f64]) -> Result<()> {
    match xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        Some(x) => Err(Error::InvalidInput(format!("{what} entry {x} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn forward_cluster(
    lifetimes: &[usize],
    horizon: usize,
    alpha: impl Iterator<Item = f64>,
    beta: &[f64],
) -> ClusterTape {
    let len = horizon + 1;
    let mut at_risk = vec![0.0; len];
    let mut terminal = vec![0.0; len];
    for ((&h, a), &b) in lifetimes.iter().zip(alpha).zip(beta) {
        at_risk[h] += a;
        terminal[h] += b * a;
    }
    for j in (0..horizon).rev() {
        at_risk[j] += at_risk[j + 1];
    }
    let mut factors = vec![1.0; len];
    let mut values = vec![0.0; len];
    let mut running = 1.0;
    for j in 0..len {
        if at_risk[j] > 0.0 {
            factors[j] = (at_risk[j] - terminal[j]) / at_risk[j];
        }
        running *= factors[j];
        values[j] = running;
    }
    ClusterTape {
        at_risk,
        terminal,
        factors,
        values,
    }
}

impl ClusterTape {
    fn distribution(&self) -> EmpiricalLifetimeDistribution {
        EmpiricalLifetimeDistribution::new(self.values.clone(), self.at_risk[0])
    }

    /// Adjoints of `s[j]` and `d[j]` given adjoints of the curve and of `effective_n`.
    fn backward(&self, grad_values: &[f64], grad_n: f64) -> (Vec<f64>, Vec<f64>) {
        let len = self.values.len();
        // tail[j] = sum_{t>=j} g[t] * prod_{j<i<=t} f_i, so dL/df_j = S[j-1] * tail[j].
        let mut tail = vec![0.0; len];
        let mut acc = 0.0;
        for j in (0..len).rev() {
            acc = grad_values[j] + if j + 1 < len { self.factors[j + 1] * acc } else { 0.0 };
            tail[j] = acc;
        }
        let mut grad_s = vec![0.0; len];
        let mut grad_d = vec![0.0; len];
        for j in 0..len {
            let s = self.at_risk[j];
            if s > 0.0 {
                let prefix = if j == 0 { 1.0 } else { self.values[j - 1] };
                let grad_f = prefix * tail[j];
                grad_s[j] = grad_f * self.terminal[j] / (s * s);
                grad_d[j] = -grad_f / s;
            }
        }
        grad_s[0] += grad_n;
        (grad_s, grad_d)
    }
}

/// Product-limit curves for every cluster plus what is needed to backpropagate.
#[derive(Debug, Clone)]
pub struct KmTape {
    lifetimes: Vec<usize>,
    alpha: Matrix,
    beta: Vec<f64>,
    clusters: Vec<ClusterTape>,
}

impl KmTape {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn distributions(&self) -> Vec<EmpiricalLifetimeDistribution> {
        self.clusters.iter().map(ClusterTape::distribution).collect()
    }

    /// Vector-Jacobian product. `grad_values[k]` is the adjoint of cluster `k`'s
    /// curve and `grad_n[k]` that of its effective size. Returns the adjoints of
    /// the membership matrix and of the termination probabilities.
    pub fn backward(&self, grad_values: &[Vec<f64>], grad_n: &[f64]) -> (Matrix, Vec<f64>) {
        let n = self.lifetimes.len();
        let k_total = self.clusters.len();
        let mut grad_alpha = Matrix::zeros(n, k_total);
        let mut grad_beta = vec![0.0; n];
        for (k, tape) in self.clusters.iter().enumerate() {
            let (grad_s, grad_d) = tape.backward(&grad_values[k], grad_n[k]);
            let mut cumulative = grad_s;
            for j in 1..cumulative.len() {
                cumulative[j] += cumulative[j - 1];
            }
            for (u, &h) in self.lifetimes.iter().enumerate() {
                let a = self.alpha[(u, k)];
                grad_alpha[(u, k)] = cumulative[h] + grad_d[h] * self.beta[u];
                grad_beta[u] += grad_d[h] * a;
            }
        }
        (grad_alpha, grad_beta)
    }

    fn unit_adjoint(&self, k: usize, t: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let len = self.clusters[0].values.len();
        let mut grads = vec![vec![0.0; len]; self.clusters.len()];
        grads[k][t] = 1.0;
        (grads, vec![0.0; self.clusters.len()])
    }

    /// `dS_k[t] / d alpha_k[u]`.
    pub fn d_value_d_alpha(&self, k: usize, t: usize, u: usize) -> f64 {
        let (g, gn) = self.unit_adjoint(k, t);
        self.backward(&g, &gn).0[(u, k)]
    }

    /// `dS_k[t] / d beta[u]`.
    pub fn d_value_d_beta(&self, k: usize, t: usize, u: usize) -> f64 {
        let (g, gn) = self.unit_adjoint(k, t);
        self.backward(&g, &gn).1[u]
    }
}

fn as_indices(lifetimes: &[Time], horizon: usize) -> Result<Vec<usize>> {
    lifetimes
        .iter()
        .map(|&h| {
            let h = h as usize;
            if h > horizon {
                Err(Error::InvalidInput(format!(
                    "lifetime {h} exceeds horizon {horizon}"
                )))
            } else {
                Ok(h)
            }
        })
        .collect()
}

/// Weighted product-limit curves for all clusters at once, over raw observed
/// lifetimes on the grid `0..=horizon`.
///
/// `alpha` is `n x K` (one row per subject); `beta` has one entry per subject.
pub fn differentiable_km_lifetimes(
    lifetimes: &[Time],
    horizon: Time,
    alpha: &Matrix,
    beta: &[f64],
) -> Result<(Vec<EmpiricalLifetimeDistribution>, KmTape)> {
    if lifetimes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if alpha.rows() != lifetimes.len() {
        return Err(Error::LengthMismatch {
            what: "membership rows",
            expected: lifetimes.len(),
            actual: alpha.rows(),
        });
    }
    if beta.len() != lifetimes.len() {
        return Err(Error::LengthMismatch {
            what: "termination probabilities",
            expected: lifetimes.len(),
            actual: beta.len(),
        });
    }
    check_unit_interval("membership", alpha.as_slice())?;
    check_unit_interval("termination probability", beta)?;
    let horizon = horizon as usize;
    let indices = as_indices(lifetimes, horizon)?;
    let clusters: Vec<ClusterTape> = (0..alpha.cols())
        .map(|k| forward_cluster(&indices, horizon, (0..alpha.rows()).map(|u| alpha[(u, k)]), beta))
        .collect();
    let tape = KmTape {
        lifetimes: indices,
        alpha: alpha.clone(),
        beta: beta.to_vec(),
        clusters,
    };
    Ok((tape.distributions(), tape))
}

/// Forward and reverse-mode evaluation of [`weighted_kaplan_meier`] for every
/// column of `alpha`.
pub fn differentiable_km(
    data: &Dataset,
    alpha: &Matrix,
    beta: &[f64],
) -> Result<(Vec<EmpiricalLifetimeDistribution>, KmTape)> {
    differentiable_km_lifetimes(&data.observed_lifetimes(), data.t_max, alpha, beta)
}

/// Curve for a single cluster with memberships `alpha_k`.
pub fn weighted_kaplan_meier(
    data: &Dataset,
    alpha_k: &[f64],
    beta: &[f64],
) -> Result<EmpiricalLifetimeDistribution> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    weighted_kaplan_meier_lifetimes(&data.observed_lifetimes(), data.t_max, alpha_k, beta)
}

pub fn weighted_kaplan_meier_lifetimes(
    lifetimes: &[Time],
    horizon: Time,
    alpha_k: &[f64],
    beta: &[f64],
) -> Result<EmpiricalLifetimeDistribution> {
    let alpha = Matrix::from_vec(alpha_k.len(), 1, alpha_k.to_vec());
    let (mut dists, _) = differentiable_km_lifetimes(lifetimes, horizon, &alpha, beta)?;
    let dist = dists.pop().expect("one column");
    if dist.degenerate {
        log::warn!("cluster has zero membership mass; returning a flat curve");
    }
    Ok(dist)
}
