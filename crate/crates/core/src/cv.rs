//! K-fold cross-validation: train on the other folds, score the held-out fold.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{Dataset, Time};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::nn::network::ModelParams;
use crate::nn::train::{assign, train, TrainingLog};

/// Terminal flags for evaluation: the recorded flag when present, otherwise
/// whether the inactive period exceeds `window`.
pub fn event_flags(data: &Dataset, window: Option<Time>) -> Result<Vec<bool>> {
    data.subjects
        .iter()
        .enumerate()
        .map(|(i, s)| match (s.last_termination_flag(), window) {
            (Some(f), _) => Ok(f),
            (None, Some(w)) => Ok(data.inactive_period(i) > w),
            (None, None) => Err(Error::TerminationSignalsUnavailable { id: s.id.clone() }),
        })
        .collect()
}

/// Shuffled partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Seed for fold `fold`'s training run.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1))
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub report: EvalReport,
    /// Same fold scored with uniformly random cluster labels.
    pub control: EvalReport,
    pub log: TrainingLog,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std_error: f64,
}

impl Aggregate {
    /// Mean and standard error (sample deviation over `sqrt(n)`).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_error = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Some(Self { mean, std_error })
    }
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
}

fn metric_columns(r: &EvalReport) -> String {
    let sizes: Vec<String> = r.cluster_sizes.iter().map(usize::to_string).collect();
    format!(
        "{:?},{:?},{:?},{},{}",
        r.c_index,
        r.ibs,
        r.logrank,
        r.ari.map(|a| format!("{a:?}")).unwrap_or_default(),
        sizes.join(";")
    )
}

impl CvResult {
    pub fn reports(&self) -> Vec<&EvalReport> {
        self.folds.iter().map(|f| &f.report).collect()
    }

    /// One row per fold and method.
    pub fn folds_csv(&self) -> String {
        let mut out = String::from("fold,method,n_train,n_test,c_index,ibs,logrank,ari,cluster_sizes\n");
        for f in &self.folds {
            for (method, r) in [("model", &f.report), ("random", &f.control)] {
                out.push_str(&format!(
                    "{},{method},{},{},{}\n",
                    f.fold,
                    f.n_train,
                    f.n_test,
                    metric_columns(r)
                ));
            }
        }
        out
    }

    /// `key=value` summary with `<metric>_mean` and `<metric>_se` per method.
    pub fn summary_kv(&self) -> String {
        let mut out = format!("folds={}\n", self.folds.len());
        for (method, pick) in [
            ("model", (|f: &FoldResult| &f.report) as fn(&FoldResult) -> &EvalReport),
            ("random", |f: &FoldResult| &f.control),
        ] {
            let series: [(&str, Vec<f64>); 4] = [
                ("c_index", self.folds.iter().map(|f| pick(f).c_index).collect()),
                ("ibs", self.folds.iter().map(|f| pick(f).ibs).collect()),
                ("logrank", self.folds.iter().map(|f| pick(f).logrank).collect()),
                ("ari", self.folds.iter().filter_map(|f| pick(f).ari).collect()),
            ];
            for (name, values) in series {
                if let Some(a) = Aggregate::of(&values) {
                    out.push_str(&format!(
                        "{method}_{name}_mean={:?}\n{method}_{name}_se={:?}\n",
                        a.mean, a.std_error
                    ));
                }
            }
        }
        out
    }

    pub fn mean(&self, metric: impl Fn(&EvalReport) -> Option<f64>, control: bool) -> Option<f64> {
        let values: Vec<f64> = self
            .folds
            .iter()
            .filter_map(|f| metric(if control { &f.control } else { &f.report }))
            .collect();
        Aggregate::of(&values).map(|a| a.mean)
    }
}

/// Runs the full protocol. `truth` holds ground-truth labels aligned with `data`.
pub fn cross_validate(data: &Dataset, config: &RunConfig, truth: Option<&[usize]>) -> Result<CvResult> {
    let train_cfg = config.resolved_train()?;
    if let Some(t) = truth {
        if t.len() != data.len() {
            return Err(Error::LengthMismatch {
                what: "ground-truth labels",
                expected: data.len(),
                actual: t.len(),
            });
        }
    }
    if data.len() < config.folds {
        return Err(Error::InvalidInput(format!(
            "{} subjects cannot fill {} folds",
            data.len(),
            config.folds
        )));
    }
    let k = train_cfg.clusters;
    let folds = fold_indices(data.len(), config.folds, train_cfg.seed);
    let mut results = Vec::with_capacity(folds.len());
    for (fold, test_idx) in folds.iter().enumerate() {
        let seed = fold_seed(train_cfg.seed, fold);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rest: Vec<usize> = (0..data.len()).filter(|i| test_idx.binary_search(i).is_err()).collect();
        if let Some(n) = config.n_train {
            if n < rest.len() {
                let mut picked: Vec<usize> = index::sample(&mut rng, rest.len(), n)
                    .into_iter()
                    .map(|j| rest[j])
                    .collect();
                picked.sort_unstable();
                rest = picked;
            }
        }
        let train_data = data.subset(&rest)?;
        let test_data = data.subset(test_idx)?;
        let mut cfg = train_cfg.clone();
        cfg.seed = seed;
        let (params, log) = train(&train_data, &cfg)?;
        let assignment = assign(&params, &test_data.subjects, cfg.tau)?;
        let events = event_flags(&test_data, config.timeout_window)?;
        let test_truth: Option<Vec<usize>> = truth.map(|t| test_idx.iter().map(|&i| t[i]).collect());
        let (report, _) = evaluate(&test_data, &events, &assignment.labels, k, test_truth.as_deref())?;
        let random: Vec<usize> = (0..test_data.len()).map(|_| rng.random_range(0..k)).collect();
        let (control, _) = evaluate(&test_data, &events, &random, k, test_truth.as_deref())?;
        log::info!(
            "fold {fold}: c_index={:.4} ari={:?} (random c_index={:.4})",
            report.c_index,
            report.ari,
            control.c_index
        );
        results.push(FoldResult {
            fold,
            n_train: rest.len(),
            n_test: test_idx.len(),
            report,
            control,
            log,
            params,
        });
    }
    Ok(CvResult { folds: results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition() {
        let folds = fold_indices(23, 5, 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert_eq!(folds, fold_indices(23, 5, 1));
    }

    #[test]
    fn aggregate_standard_error() {
        let a = Aggregate::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.mean, 2.5);
        // sample var 5/3, se = sqrt(5/12)
        assert!((a.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(Aggregate::of(&[]).is_none());
    }
}
