//! Divergences between cluster survival curves and the max-min clustering
//! objective built on them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::km::EmpiricalLifetimeDistribution;
use crate::kuiper::{
    effective_size, kuiper_statistic, lambda_scale, lambda_scale_grad, log_kd_upper_grad,
    log_kd_upper_unclamped_grad,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceKind {
    /// `-log` of the closed-form Kuiper p-value upper bound.
    KuiperUb,
    /// Squared MMD between the implied lifetime PMFs with a Gaussian kernel on
    /// the time axis. `None` selects the median pairwise time gap.
    Mmd { bandwidth: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSampling {
    AllPairs,
    SampleWithoutReplacement(usize),
}

impl PairSampling {
    /// All pairs up to eight clusters, otherwise `K` sampled pairs.
    pub fn default_for(k: usize) -> Self {
        if k <= 8 {
            PairSampling::AllPairs
        } else {
            PairSampling::SampleWithoutReplacement(k)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    pub pair_sampling: PairSampling,
    /// Let gradients reach the effective sample sizes through `lambda`.
    pub grad_through_n: bool,
    pub bound: BoundForm,
    /// Pairs involving a cluster with less membership mass than this are skipped
    /// by [`min_pair_objective`].
    pub min_effective_n: f64,
}

/// Which form of `-log` of the p-value upper bound the Kuiper divergence uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundForm {
    /// `min(1, bound)`: zero divergence and zero slope until the bound drops below one.
    Clamped,
    /// The bare bound. Exceeds one and is not monotone for `lambda < 1`.
    Unclamped,
    /// The bare bound for `lambda >= 1`, its tangent line below. Monotone and
    /// continuously differentiable in `lambda`.
    Continued,
}

impl BoundForm {
    pub fn name(self) -> &'static str {
        match self {
            BoundForm::Clamped => "clamped",
            BoundForm::Unclamped => "unclamped",
            BoundForm::Continued => "continued",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clamped" => Some(BoundForm::Clamped),
            "unclamped" => Some(BoundForm::Unclamped),
            "continued" => Some(BoundForm::Continued),
            _ => None,
        }
    }
}

/// Below this `lambda` the continued form is linear. The bound's `r_lo = 0`
/// branch `8 l^2 exp(-2 l^2)` holds here, so `-log` is `2 - ln 8` with slope 2.
pub const CONTINUATION_LAMBDA: f64 = 1.0;

/// `(-log p, d(-log p)/d lambda)` under the chosen bound form; `lambda > 0`.
pub fn neg_log_bound(form: BoundForm, lambda: f64) -> Result<(f64, f64)> {
    let (log_p, dlog_p) = match form {
        BoundForm::Clamped => log_kd_upper_grad(lambda)?,
        BoundForm::Unclamped => log_kd_upper_unclamped_grad(lambda)?,
        BoundForm::Continued => {
            if lambda >= CONTINUATION_LAMBDA {
                log_kd_upper_unclamped_grad(lambda)?
            } else {
                let (at, slope) = log_kd_upper_unclamped_grad(CONTINUATION_LAMBDA)?;
                (at + slope * (lambda - CONTINUATION_LAMBDA), slope)
            }
        }
    };
    Ok((-log_p, -dlog_p))
}

impl Default for DivergenceSpec {
    fn default() -> Self {
        Self {
            kind: DivergenceKind::KuiperUb,
            pair_sampling: PairSampling::AllPairs,
            grad_through_n: true,
            bound: BoundForm::Clamped,
            min_effective_n: 0.0,
        }
    }
}

impl DivergenceSpec {
    pub fn kuiper() -> Self {
        Self::default()
    }

    pub fn mmd() -> Self {
        Self {
            kind: DivergenceKind::Mmd { bandwidth: None },
            ..Self::default()
        }
    }
}

/// Value of a divergence and its partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaOutput {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
    pub grad_n_a: f64,
    pub grad_n_b: f64,
}

impl DeltaOutput {
    fn zero(value: f64, len: usize) -> Self {
        Self {
            value,
            grad_a: vec![0.0; len],
            grad_b: vec![0.0; len],
            grad_n_a: 0.0,
            grad_n_b: 0.0,
        }
    }
}

pub fn delta(
    spec: &DivergenceSpec,
    a: &EmpiricalLifetimeDistribution,
    b: &EmpiricalLifetimeDistribution,
) -> Result<DeltaOutput> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "survival curves",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if !(a.effective_n > 0.0 && b.effective_n > 0.0) {
        return Err(Error::DegenerateCluster);
    }
    match spec.kind {
        DivergenceKind::KuiperUb => kuiper_delta(spec, a, b),
        DivergenceKind::Mmd { bandwidth } => {
            let h = bandwidth.unwrap_or_else(|| median_gap_bandwidth(a.len() + 1));
            Ok(mmd_delta(&a.values, &b.values, h))
        }
    }
}

fn kuiper_delta(
    spec: &DivergenceSpec,
    a: &EmpiricalLifetimeDistribution,
    b: &EmpiricalLifetimeDistribution,
) -> Result<DeltaOutput> {
    let stat = kuiper_statistic(a, b)?;
    let (n_a, n_b) = (a.effective_n, b.effective_n);
    let m = effective_size(n_a, n_b)?;
    let scale = lambda_scale(m);
    let lambda = scale * stat.v_stat;
    if lambda <= 0.0 {
        // identical curves: no direction to follow
        let value = match spec.bound {
            BoundForm::Continued => neg_log_bound(BoundForm::Continued, 0.0)?.0,
            _ => 0.0,
        };
        return Ok(DeltaOutput::zero(value, a.len()));
    }
    let (value, grad_lambda) = neg_log_bound(spec.bound, lambda)?;
    let mut out = DeltaOutput::zero(value, a.len());
    if grad_lambda == 0.0 {
        return Ok(out);
    }
    let grad_v = grad_lambda * scale;
    if let Some(t) = stat.argmax_plus {
        out.grad_a[t] += grad_v;
        out.grad_b[t] -= grad_v;
    }
    if let Some(t) = stat.argmax_minus {
        out.grad_b[t] += grad_v;
        out.grad_a[t] -= grad_v;
    }
    if spec.grad_through_n {
        let grad_m = grad_lambda * stat.v_stat * lambda_scale_grad(m);
        let denom = (n_a + n_b) * (n_a + n_b);
        out.grad_n_a = grad_m * n_b * n_b / denom;
        out.grad_n_b = grad_m * n_a * n_a / denom;
    }
    Ok(out)
}

/// Median of `|s - t|` over distinct pairs of `points` grid points.
pub fn median_gap_bandwidth(points: usize) -> f64 {
    if points < 2 {
        return 1.0;
    }
    // gap g occurs (points - g) times
    let total = points * (points - 1) / 2;
    let half = total.div_ceil(2);
    let mut seen = 0;
    for g in 1..points {
        seen += points - g;
        if seen >= half {
            return g as f64;
        }
    }
    (points - 1) as f64
}

/// PMF implied by a curve on `0..=t_max`, with the surviving mass placed at `t_max + 1`.
fn implied_pmf(values: &[f64]) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(values.len() + 1);
    let mut prev = 1.0;
    for &s in values {
        pmf.push(prev - s);
        prev = s;
    }
    pmf.push(prev);
    pmf
}

fn mmd_delta(a: &[f64], b: &[f64], bandwidth: f64) -> DeltaOutput {
    let pa = implied_pmf(a);
    let pb = implied_pmf(b);
    let diff: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
    let len = diff.len();
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let kernel: Vec<f64> = (0..len).map(|g| (-((g * g) as f64) * inv).exp()).collect();
    // kd = K * diff
    let kd: Vec<f64> = (0..len)
        .map(|s| {
            diff.iter()
                .enumerate()
                .map(|(t, &e)| kernel[s.abs_diff(t)] * e)
                .sum()
        })
        .collect();
    let value: f64 = diff.iter().zip(&kd).map(|(e, k)| e * k).sum();
    // d value / d pmf = 2 K diff; S[t] enters pmf[t] with -1 and pmf[t+1] with +1
    let grad_a: Vec<f64> = (0..a.len()).map(|t| 2.0 * (kd[t + 1] - kd[t])).collect();
    let grad_b = grad_a.iter().map(|g| -g).collect();
    DeltaOutput {
        value: value.max(0.0),
        grad_a,
        grad_b,
        grad_n_a: 0.0,
        grad_n_b: 0.0,
    }
}

/// Index of the unordered pair `(i, j)` in the lexicographic list of pairs.
pub fn pair_list(k: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            pairs.push((i, j));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDelta {
    pub pair: (usize, usize),
    pub delta: DeltaOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairObjective {
    /// The minimizing pair; `None` when every selected pair was skipped.
    pub best: Option<PairDelta>,
    /// Pairs that were evaluated, in evaluation order.
    pub evaluated: Vec<(usize, usize)>,
    /// Pairs dropped because a cluster was too small.
    pub skipped: Vec<(usize, usize)>,
}

impl PairObjective {
    pub fn value(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.delta.value)
    }
}

/// Minimum divergence over the selected cluster pairs.
///
/// Only the minimizing pair carries gradient. Ties go to the lowest pair index.
pub fn min_pair_objective<R: Rng + ?Sized>(
    spec: &DivergenceSpec,
    distributions: &[EmpiricalLifetimeDistribution],
    rng: &mut R,
) -> Result<PairObjective> {
    let k = distributions.len();
    if k < 2 {
        return Err(Error::TooFewClusters(k));
    }
    let all = pair_list(k);
    let selected: Vec<(usize, usize)> = match spec.pair_sampling {
        PairSampling::AllPairs => all,
        PairSampling::SampleWithoutReplacement(count) => {
            if count == 0 || count > all.len() {
                return Err(Error::InvalidInput(format!(
                    "cannot sample {count} of {} cluster pairs",
                    all.len()
                )));
            }
            let mut idx = rand::seq::index::sample(rng, all.len(), count).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        }
    };
    let mut best: Option<PairDelta> = None;
    let mut skipped = Vec::new();
    for &(i, j) in &selected {
        let (a, b) = (&distributions[i], &distributions[j]);
        let floor = spec.min_effective_n.max(0.0);
        if !(a.effective_n > floor && b.effective_n > floor) {
            skipped.push((i, j));
            continue;
        }
        let d = delta(spec, a, b)?;
        if best.as_ref().is_none_or(|cur| d.value < cur.delta.value) {
            best = Some(PairDelta {
                pair: (i, j),
                delta: d,
            });
        }
    }
    Ok(PairObjective {
        best,
        evaluated: selected,
        skipped,
    })
}
