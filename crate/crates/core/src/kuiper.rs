//! Two-sample Kuiper test on discrete survival curves.
//!
//! The asymptotic p-value is the series
//!
//! ```text
//! Q(lambda) = 2 * sum_{j>=1} (4 j^2 lambda^2 - 1) exp(-2 j^2 lambda^2)
//! ```
//!
//! Besides a truncated evaluation of the series, this module provides closed-form
//! upper and lower bounds obtained by bracketing the sum with integrals of the
//! summand `v(r) = (4 r^2 lambda^2 - 1) exp(-2 r^2 lambda^2)`, whose antiderivative
//! in `r` is `w(r) = -r exp(-2 r^2 lambda^2)`. The split point between the
//! increasing and decreasing parts is `1 / (sqrt(2) lambda)`, with
//! `r_lo = floor` and `r_up = ceil` of it.

use crate::error::{Error, Result};
use crate::km::EmpiricalLifetimeDistribution;

/// Default number of series terms for [`kd_reference`].
pub const REFERENCE_TERMS: usize = 10_000;

/// Below this `lambda` the series is reported as exactly 1.
pub const REFERENCE_LAMBDA_FLOOR: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KuiperStatistic {
    pub d_plus: f64,
    pub d_minus: f64,
    pub v_stat: f64,
    /// Time index attaining `d_plus`, `None` when the one-sided maximum was clamped.
    pub argmax_plus: Option<usize>,
    pub argmax_minus: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KuiperResult {
    pub d_plus: f64,
    pub d_minus: f64,
    pub v_stat: f64,
    pub effective_m: f64,
    pub lambda: f64,
    pub p_upper: f64,
    pub p_lower: f64,
    pub p_reference: Option<f64>,
}

/// Largest positive and negative separations between two aligned curves.
///
/// Each one-sided maximum is clamped at zero, so a strictly dominated
/// direction contributes nothing to `v_stat`. Ties pick the earliest time.
pub fn kuiper_statistic(
    a: &EmpiricalLifetimeDistribution,
    b: &EmpiricalLifetimeDistribution,
) -> Result<KuiperStatistic> {
    kuiper_statistic_values(&a.values, &b.values)
}

pub fn kuiper_statistic_values(a: &[f64], b: &[f64]) -> Result<KuiperStatistic> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "survival curves",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty survival curves".into()));
    }
    let mut plus = (f64::NEG_INFINITY, 0);
    let mut minus = (f64::NEG_INFINITY, 0);
    for (t, (x, y)) in a.iter().zip(b).enumerate() {
        let diff = x - y;
        if diff > plus.0 {
            plus = (diff, t);
        }
        if -diff > minus.0 {
            minus = (-diff, t);
        }
    }
    let clamp = |(m, t): (f64, usize)| if m >= 0.0 { (m, Some(t)) } else { (0.0, None) };
    let (d_plus, argmax_plus) = clamp(plus);
    let (d_minus, argmax_minus) = clamp(minus);
    Ok(KuiperStatistic {
        d_plus,
        d_minus,
        v_stat: d_plus + d_minus,
        argmax_plus,
        argmax_minus,
    })
}

/// `M = n_a n_b / (n_a + n_b)`.
pub fn effective_size(n_a: f64, n_b: f64) -> Result<f64> {
    if !(n_a > 0.0 && n_b > 0.0) {
        return Err(Error::NonPositiveSampleSize { n_a, n_b });
    }
    Ok(n_a * n_b / (n_a + n_b))
}

/// Multiplier `sqrt(M) + 0.155 + 0.24 / sqrt(M)` that turns `V` into `lambda`.
pub(crate) fn lambda_scale(m: f64) -> f64 {
    let root = m.sqrt();
    root + 0.155 + 0.24 / root
}

/// Derivative of [`lambda_scale`] with respect to `M`.
pub(crate) fn lambda_scale_grad(m: f64) -> f64 {
    let root = m.sqrt();
    0.5 / root - 0.12 / (m * root)
}

pub fn lambda_of(v_stat: f64, n_a: f64, n_b: f64) -> Result<f64> {
    let m = effective_size(n_a, n_b)?;
    Ok(lambda_scale(m) * v_stat)
}

/// Truncated series, clamped to `[0, 1]`; exactly 1 below [`REFERENCE_LAMBDA_FLOOR`].
pub fn kd_reference(lambda: f64, terms: usize) -> f64 {
    if lambda < REFERENCE_LAMBDA_FLOOR {
        return 1.0;
    }
    let l2 = lambda * lambda;
    let mut sum = 0.0;
    for j in 1..=terms {
        let jj = (j * j) as f64;
        let decay = (-2.0 * jj * l2).exp();
        if decay == 0.0 {
            // every later term underflows too
            break;
        }
        sum += (4.0 * jj * l2 - 1.0) * decay;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn v(r: f64, lambda: f64) -> f64 {
    let x = r * r * lambda * lambda;
    (4.0 * x - 1.0) * (-2.0 * x).exp()
}

fn w(r: f64, lambda: f64) -> f64 {
    -r * (-2.0 * r * r * lambda * lambda).exp()
}

fn v_grad(r: f64, lambda: f64) -> f64 {
    let x = r * r * lambda * lambda;
    4.0 * r * r * lambda * (3.0 - 4.0 * x) * (-2.0 * x).exp()
}

fn w_grad(r: f64, lambda: f64) -> f64 {
    4.0 * r * r * r * lambda * (-2.0 * r * r * lambda * lambda).exp()
}

/// `(r_lo, r_up, lambda')` where `lambda'` is `lambda` nudged by whole ulps
/// until `1 / (sqrt(2) lambda')` is not an integer.
fn split_indices(lambda: f64) -> (f64, f64, f64) {
    let mut lam = lambda;
    loop {
        let x = 1.0 / (std::f64::consts::SQRT_2 * lam);
        let (lo, up) = (x.floor(), x.ceil());
        if lo != up {
            return (lo, up, lam);
        }
        lam = lam.next_up();
    }
}

/// Unclamped upper bound `2 * [...]` and its derivative in `lambda` (for `lambda > 0`).
fn upper_sum(lambda: f64) -> (f64, f64) {
    let (lo, up, lam) = split_indices(lambda);
    let mut val = v(up, lam) - w(up, lam);
    let mut grad = v_grad(up, lam) - w_grad(up, lam);
    if lo >= 1.0 {
        val += w(lo, lam) - w(1.0, lam) + v(lo, lam);
        grad += w_grad(lo, lam) - w_grad(1.0, lam) + v_grad(lo, lam);
    }
    (2.0 * val, 2.0 * grad)
}

/// Closed-form upper bound on the Kuiper p-value, `min(1, 2 * [...])`.
pub fn kd_upper_bound(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    upper_sum(lambda).0.min(1.0)
}

/// The upper-bound expression without the `min(1, .)` clamp. Exceeds one for
/// small `lambda`, where it still carries slope information.
pub fn kd_upper_bound_unclamped(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return f64::INFINITY;
    }
    upper_sum(lambda).0
}

/// Closed-form lower bound on the Kuiper p-value.
pub fn kd_lower_bound(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let (lo, up, lam) = split_indices(lambda);
    let mut val = v(up, lam) + w(up + 1.0, lam);
    if lo >= 1.0 {
        val += w(lo - 1.0, lam) + v(lo, lam);
    }
    (2.0 * val).max(0.0)
}

/// `log` of the unclamped upper bound and its derivative in `lambda`.
///
/// On the `r_lo = 0` branch the bound is `8 lambda^2 exp(-2 lambda^2)`, which is
/// evaluated in log space so that large `lambda` does not underflow.
pub fn log_kd_upper_unclamped_grad(lambda: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let (lo, _, lam) = split_indices(lambda);
    if lo < 1.0 {
        let log_value = (8.0 * lam * lam).ln() - 2.0 * lam * lam;
        return Ok((log_value, 2.0 / lam - 4.0 * lam));
    }
    let (val, grad) = upper_sum(lambda);
    Ok((val.ln(), grad / val))
}

/// `log kd_upper_bound(lambda)` and its derivative; zero slope on the clamp.
///
/// `r_lo` and `r_up` are held fixed, so the derivative is that of the active branch.
pub fn log_kd_upper_grad(lambda: f64) -> Result<(f64, f64)> {
    let (log_value, grad) = log_kd_upper_unclamped_grad(lambda)?;
    if log_value >= 0.0 {
        Ok((0.0, 0.0))
    } else {
        Ok((log_value, grad))
    }
}

/// Full test between two curves with the given effective sample sizes.
pub fn kuiper_test(
    a: &EmpiricalLifetimeDistribution,
    b: &EmpiricalLifetimeDistribution,
    reference_terms: Option<usize>,
) -> Result<KuiperResult> {
    let stat = kuiper_statistic(a, b)?;
    let effective_m = effective_size(a.effective_n, b.effective_n)?;
    let lambda = lambda_scale(effective_m) * stat.v_stat;
    Ok(KuiperResult {
        d_plus: stat.d_plus,
        d_minus: stat.d_minus,
        v_stat: stat.v_stat,
        effective_m,
        lambda,
        p_upper: kd_upper_bound(lambda),
        p_lower: kd_lower_bound(lambda),
        p_reference: reference_terms.map(|terms| kd_reference(lambda, terms)),
    })
}
