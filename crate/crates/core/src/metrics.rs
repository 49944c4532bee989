//! Survival-clustering evaluation: concordance, integrated Brier score, K-group
//! logrank statistic and adjusted Rand index.

use std::collections::BTreeMap;

use crate::data::{Dataset, Time};
use crate::error::{Error, Result};
use crate::km::{weighted_kaplan_meier_lifetimes, EmpiricalLifetimeDistribution};

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            actual,
        })
    }
}

/// Harrell's concordance index. Higher risk should mean shorter lifetime.
///
/// A pair `(i, j)` is comparable when `i` is terminal and `T_i < T_j`; it is
/// concordant when `risk_i > risk_j` and counts one half on tied risks.
pub fn c_index(lifetimes: &[Time], censored: &[bool], risk: &[f64]) -> Result<f64> {
    check_len("censoring flags", lifetimes.len(), censored.len())?;
    check_len("risk scores", lifetimes.len(), risk.len())?;
    let mut comparable = 0u64;
    // Twice the concordant count, to keep ties exact.
    let mut score = 0u64;
    for i in 0..lifetimes.len() {
        if censored[i] {
            continue;
        }
        for j in 0..lifetimes.len() {
            if lifetimes[i] < lifetimes[j] {
                comparable += 1;
                if risk[i] > risk[j] {
                    score += 2;
                } else if risk[i] == risk[j] {
                    score += 1;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(score as f64 / (2 * comparable) as f64)
}

/// Mean per-subject Brier score `mean_t (1[T > t] - S_k(t))^2` over
/// `t = 0..curve length`.
///
/// Censored subjects only contribute times before their censoring time; a
/// censored subject observed for zero time contributes nothing.
pub fn integrated_brier(
    lifetimes: &[Time],
    censored: &[bool],
    curves: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64> {
    check_len("censoring flags", lifetimes.len(), censored.len())?;
    check_len("labels", lifetimes.len(), labels.len())?;
    let mut total = 0.0;
    let mut contributors = 0usize;
    for u in 0..lifetimes.len() {
        let curve = curves.get(labels[u]).ok_or_else(|| {
            Error::InvalidInput(format!("label {} has no curve", labels[u]))
        })?;
        let h = lifetimes[u] as usize;
        let upto = if censored[u] { h.min(curve.len()) } else { curve.len() };
        if upto == 0 {
            continue;
        }
        let sum: f64 = curve[..upto]
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let alive = if h > t { 1.0 } else { 0.0 };
                (alive - s) * (alive - s)
            })
            .sum();
        total += sum / upto as f64;
        contributors += 1;
    }
    if contributors == 0 {
        return Err(Error::EmptyContribution);
    }
    Ok(total / contributors as f64)
}

/// K-group logrank chi-square statistic `z^T V^- z` over the first `K - 1`
/// groups, where `z = O - E` and `V` is the hypergeometric covariance.
pub fn logrank(lifetimes: &[Time], events: &[bool], labels: &[usize], k: usize) -> Result<f64> {
    check_len("event flags", lifetimes.len(), events.len())?;
    check_len("labels", lifetimes.len(), labels.len())?;
    if k < 2 {
        return Err(Error::TooFewClusters(k));
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::InvalidInput(format!("label {l} outside 0..{k}")));
        }
        sizes[l] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::EmptyGroup);
    }

    // (at risk, events) per group at each time
    let mut by_time: BTreeMap<Time, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for u in 0..lifetimes.len() {
        let entry = by_time
            .entry(lifetimes[u])
            .or_insert_with(|| (vec![0.0; k], vec![0.0; k]));
        entry.0[labels[u]] += 1.0;
        if events[u] {
            entry.1[labels[u]] += 1.0;
        }
    }
    let mut at_risk: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let m = k - 1;
    let mut z = vec![0.0; m];
    let mut v = vec![vec![0.0; m]; m];
    for (leaving, deaths) in by_time.values() {
        let n: f64 = at_risk.iter().sum();
        let d: f64 = deaths.iter().sum();
        if d > 0.0 {
            for a in 0..m {
                z[a] += deaths[a] - d * at_risk[a] / n;
            }
            if n > 1.0 {
                let c = d * (n - d) / (n - 1.0);
                for a in 0..m {
                    for b in 0..m {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        v[a][b] += c * at_risk[a] / n * (delta - at_risk[b] / n);
                    }
                }
            }
        }
        for (r, l) in at_risk.iter_mut().zip(leaving) {
            *r -= l;
        }
    }
    Ok(quadratic_form_pinv(v, z).max(0.0))
}

/// `z^T A^- z` for symmetric positive semidefinite `A`, by symmetric Gaussian
/// elimination that skips vanishing pivots.
fn quadratic_form_pinv(mut a: Vec<Vec<f64>>, mut z: Vec<f64>) -> f64 {
    let m = z.len();
    let scale = (0..m).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-12;
    let mut out = 0.0;
    for p in 0..m {
        let pivot = a[p][p];
        if pivot <= tol {
            continue;
        }
        out += z[p] * z[p] / pivot;
        for i in p + 1..m {
            let f = a[i][p] / pivot;
            z[i] -= f * z[p];
            for j in p + 1..m {
                a[i][j] -= f * a[p][j];
            }
        }
    }
    out
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Hubert-Arabie adjusted Rand index. Returns 1 when both partitions are
/// trivial in the same way (the index is undefined there).
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> Result<f64> {
    check_len("labels", a.len(), b.len())?;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub c_index: f64,
    pub ibs: f64,
    pub logrank: f64,
    pub ari: Option<f64>,
    pub cluster_sizes: Vec<usize>,
}

impl EvalReport {
    /// Flat `key=value` lines; floats use shortest round-trip formatting.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "c_index={:?}\nibs={:?}\nlogrank={:?}\n",
            self.c_index, self.ibs, self.logrank
        );
        if let Some(ari) = self.ari {
            out.push_str(&format!("ari={ari:?}\n"));
        }
        let sizes: Vec<String> = self.cluster_sizes.iter().map(usize::to_string).collect();
        out.push_str(&format!("cluster_sizes={}\n", sizes.join(";")));
        out
    }
}

/// Hard-assignment product-limit curve for each of `k` clusters.
pub fn cluster_curves(
    lifetimes: &[Time],
    horizon: Time,
    events: &[bool],
    labels: &[usize],
    k: usize,
) -> Result<Vec<EmpiricalLifetimeDistribution>> {
    let beta: Vec<f64> = events.iter().map(|&e| f64::from(u8::from(e))).collect();
    (0..k)
        .map(|c| {
            let alpha: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == c))).collect();
            weighted_kaplan_meier_lifetimes(lifetimes, horizon, &alpha, &beta)
        })
        .collect()
}

/// Scores a hard clustering of `data`.
///
/// `events` marks terminal subjects. Curves are fitted on `data` itself, risk is
/// the negative restricted mean of the assigned curve, and the logrank statistic
/// is taken over nonempty clusters only (zero when fewer than two are nonempty).
pub fn evaluate(
    data: &Dataset,
    events: &[bool],
    labels: &[usize],
    k: usize,
    truth: Option<&[usize]>,
) -> Result<(EvalReport, Vec<EmpiricalLifetimeDistribution>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lifetimes = data.observed_lifetimes();
    check_len("event flags", lifetimes.len(), events.len())?;
    check_len("labels", lifetimes.len(), labels.len())?;
    let curves = cluster_curves(&lifetimes, data.t_max, events, labels, k)?;
    let censored: Vec<bool> = events.iter().map(|e| !e).collect();
    let risk: Vec<f64> = labels.iter().map(|&l| -curves[l].restricted_mean()).collect();
    let values: Vec<Vec<f64>> = curves.iter().map(|c| c.values.clone()).collect();

    let mut cluster_sizes = vec![0; k];
    for &l in labels {
        cluster_sizes[l] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&c| cluster_sizes[c] > 0).collect();
    let logrank_value = if present.len() < 2 {
        0.0
    } else {
        let compact: Vec<usize> = labels
            .iter()
            .map(|l| present.iter().position(|p| p == l).expect("present"))
            .collect();
        logrank(&lifetimes, events, &compact, present.len())?
    };
    let c = match c_index(&lifetimes, &censored, &risk) {
        Err(Error::NoComparablePairs) => {
            log::warn!("no comparable pairs; reporting c_index=0.5");
            0.5
        }
        other => other?,
    };
    let report = EvalReport {
        c_index: c,
        ibs: integrated_brier(&lifetimes, &censored, &values, labels)?,
        logrank: logrank_value,
        ari: truth.map(|t| adjusted_rand(t, labels)).transpose()?,
        cluster_sizes,
    };
    Ok((report, curves))
}
