//! Minibatch training of the assignment network against the max-min divergence
//! objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, SubjectRecord, Time};
use crate::divergence::{min_pair_objective, BoundForm, DivergenceSpec, PairSampling};
use crate::error::{Error, Result};
use crate::km::differentiable_km_lifetimes;
use crate::matrix::Matrix;
use crate::nn::adam::Adam;
use crate::nn::features::{feature_matrix, Standardizer};
use crate::nn::network::{Activation, Architecture, ForwardCache, ModelParams, Mode};
use crate::termination::TerminationModel;

/// How termination probabilities are obtained during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationChoice {
    Observed,
    Learnable,
    FixedTimeout(Time),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub clusters: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub activation: Activation,
    pub batch_norm: bool,
    /// Weight-decay coefficient: the loss carries `l2 / 2 * sum(w^2)` over dense weights.
    pub l2: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub tau: Time,
    pub divergence: DivergenceSpec,
    pub termination: TerminationChoice,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clusters: 2,
            hidden_layers: 1,
            hidden_units: 128,
            batch_size: 1024,
            learning_rate: 1e-2,
            activation: Activation::Relu,
            batch_norm: false,
            l2: 1e-2,
            epochs: 100,
            early_stop_patience: 10,
            seed: 0,
            tau: 1,
            divergence: DivergenceSpec {
                bound: BoundForm::Continued,
                min_effective_n: 1.0,
                ..DivergenceSpec::default()
            },
            termination: TerminationChoice::Observed,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    /// Hard errors for unusable values, warnings for values outside the tuned grid.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.clusters < 2 {
            return Err(Error::TooFewClusters(self.clusters));
        }
        if self.hidden_units == 0 || self.batch_size < 2 {
            return bad("hidden_units must be positive and batch_size at least 2".into());
        }
        if !(self.learning_rate >= 0.0 && self.l2 >= 0.0) {
            return bad("learning_rate and l2 must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)".into());
        }
        if let PairSampling::SampleWithoutReplacement(count) = self.divergence.pair_sampling {
            let total = self.clusters * (self.clusters - 1) / 2;
            if count == 0 || count > total {
                return bad(format!("pair sample count {count} outside 1..={total}"));
            }
        }
        let mut warnings = Vec::new();
        if !(1..=3).contains(&self.hidden_layers) {
            warnings.push(format!("hidden_layers={} outside [1, 3]", self.hidden_layers));
        }
        if ![128, 256].contains(&self.hidden_units) {
            warnings.push(format!("hidden_units={} outside {{128, 256}}", self.hidden_units));
        }
        if ![128, 256, 1024].contains(&self.batch_size) {
            warnings.push(format!("batch_size={} outside {{128, 256, 1024}}", self.batch_size));
        }
        if ![1e-3, 1e-2].contains(&self.learning_rate) {
            warnings.push(format!("learning_rate={} outside {{1e-3, 1e-2}}", self.learning_rate));
        }
        if ![1e-2, 0.0].contains(&self.l2) {
            warnings.push(format!("l2={} outside {{1e-2, 0}}", self.l2));
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(warnings)
    }
}

/// Training inputs precomputed once per dataset.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub ids: Vec<String>,
    /// Raw (unstandardized) features.
    pub features: Matrix,
    pub lifetimes: Vec<Time>,
    pub inactive: Vec<Time>,
    pub flags: Vec<Option<bool>>,
    /// Curve grid length minus one.
    pub horizon: Time,
}

impl PreparedData {
    pub fn new(data: &Dataset, tau: Time) -> Self {
        Self {
            ids: data.subjects.iter().map(|s| s.id.clone()).collect(),
            features: feature_matrix(&data.subjects, tau),
            lifetimes: data.observed_lifetimes(),
            inactive: data.inactive_periods(),
            flags: data
                .subjects
                .iter()
                .map(SubjectRecord::last_termination_flag)
                .collect(),
            horizon: data.t_max,
        }
    }

    pub fn len(&self) -> usize {
        self.lifetimes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lifetimes.is_empty()
    }

    /// `(beta, d beta / d log_rate)` for each listed subject.
    fn termination(&self, model: &TerminationModel, indices: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut beta = Vec::with_capacity(indices.len());
        let mut grad = Vec::with_capacity(indices.len());
        for &i in indices {
            let b = match model {
                TerminationModel::ObservedSignals => match self.flags[i] {
                    Some(f) => f64::from(u8::from(f)),
                    None => {
                        return Err(Error::TerminationSignalsUnavailable {
                            id: self.ids[i].clone(),
                        })
                    }
                },
                TerminationModel::LearnableExponential { log_rate } => {
                    -(-log_rate.exp() * f64::from(self.inactive[i])).exp_m1()
                }
                TerminationModel::FixedTimeout { window } => {
                    f64::from(u8::from(self.inactive[i] > *window))
                }
            };
            beta.push(b);
            grad.push(model.probability_grad(self.inactive[i]));
        }
        Ok((beta, grad))
    }
}

/// Loss, gradient and bookkeeping for one minibatch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// `-objective + l2 / 2 * sum(w^2)`.
    pub loss: f64,
    /// Minimum pairwise divergence; `None` when every pair was skipped.
    pub objective: Option<f64>,
    /// Gradient of `loss` in [`ModelParams::to_flat`] order.
    pub grad: Vec<f64>,
    pub skipped_pairs: usize,
    pub cache: ForwardCache,
}

/// Evaluates the training loss on the subjects `indices` of `data`.
pub fn batch_loss<R: rand::Rng + ?Sized>(
    params: &ModelParams,
    data: &PreparedData,
    indices: &[usize],
    spec: &DivergenceSpec,
    l2: f64,
    rng: &mut R,
) -> Result<BatchLoss> {
    let features = data.features.select_rows(indices);
    let cache = params.forward_cached(&features, Mode::Train)?;
    let (beta, beta_grad) = data.termination(&params.termination, indices)?;
    let lifetimes: Vec<Time> = indices.iter().map(|&i| data.lifetimes[i]).collect();
    let (dists, tape) = differentiable_km_lifetimes(&lifetimes, data.horizon, &cache.alpha, &beta)?;
    let objective = min_pair_objective(spec, &dists, rng)?;

    let flat = params.to_flat();
    let mask = params.l2_mask();
    let mut penalty = 0.0;
    let mut grad = vec![0.0; flat.len()];
    for ((g, &w), &m) in grad.iter_mut().zip(&flat).zip(&mask) {
        if m {
            penalty += 0.5 * l2 * w * w;
            *g = l2 * w;
        }
    }
    let Some(best) = objective.best else {
        return Ok(BatchLoss {
            loss: penalty,
            objective: None,
            grad,
            skipped_pairs: objective.skipped.len(),
            cache,
        });
    };
    let k = dists.len();
    let len = dists[0].len();
    let (i, j) = best.pair;
    let mut grad_values = vec![vec![0.0; len]; k];
    let mut grad_n = vec![0.0; k];
    // loss = -delta
    grad_values[i] = best.delta.grad_a.iter().map(|g| -g).collect();
    grad_values[j] = best.delta.grad_b.iter().map(|g| -g).collect();
    grad_n[i] = -best.delta.grad_n_a;
    grad_n[j] = -best.delta.grad_n_b;
    let (grad_alpha, grad_beta) = tape.backward(&grad_values, &grad_n);
    let net_grad = params.backward(&cache, &grad_alpha);
    for (g, n) in grad.iter_mut().zip(&net_grad) {
        *g += n;
    }
    let rate_slot = params.log_rate_index();
    grad[rate_slot] += grad_beta.iter().zip(&beta_grad).map(|(a, b)| a * b).sum::<f64>();
    Ok(BatchLoss {
        loss: penalty - best.delta.value,
        objective: Some(best.delta.value),
        grad,
        skipped_pairs: objective.skipped.len(),
        cache,
    })
}

/// Objective on a held-out set with inference-mode batch norm. Returns
/// negative infinity when no pair could be evaluated.
pub fn evaluate_objective(
    params: &ModelParams,
    data: &PreparedData,
    indices: &[usize],
    spec: &DivergenceSpec,
    seed: u64,
) -> Result<f64> {
    let features = data.features.select_rows(indices);
    let alpha = params.forward(&features, Mode::Inference)?;
    let (beta, _) = data.termination(&params.termination, indices)?;
    let lifetimes: Vec<Time> = indices.iter().map(|&i| data.lifetimes[i]).collect();
    let (dists, _) = differentiable_km_lifetimes(&lifetimes, data.horizon, &alpha, &beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(min_pair_objective(spec, &dists, &mut rng)?
        .value()
        .unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: usize,
    pub noop_iterations: usize,
    pub skipped_pairs: usize,
    pub mean_train_loss: f64,
    pub val_objective: f64,
    pub best_val_objective: f64,
    pub log_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

impl TrainingLog {
    /// One CSV row per epoch; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,iterations,noop_iterations,skipped_pairs,mean_train_loss,val_objective,best_val_objective,log_rate\n",
        );
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{:?},{:?},{:?},{}\n",
                r.epoch,
                r.iterations,
                r.noop_iterations,
                r.skipped_pairs,
                r.mean_train_loss,
                r.val_objective,
                r.best_val_objective,
                r.log_rate.map(|v| format!("{v:?}")).unwrap_or_default()
            ));
        }
        out
    }
}

/// Derived seed for the validation-objective sampler.
const VALIDATION_STREAM: u64 = 0x005e_ed0f_7a11;

/// Trains a fresh network on `data`.
///
/// A `validation_fraction` of subjects is held out; the parameters with the
/// best validation objective are returned, and training stops once that
/// objective has not improved for `early_stop_patience` epochs.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainingLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut log = TrainingLog {
        warnings: config.validate()?,
        ..TrainingLog::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prepared = PreparedData::new(data, config.tau);

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (config.validation_fraction * prepared.len() as f64).round() as usize;
    let n_val = if prepared.len() - n_val < 2 { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let standardizer = Standardizer::fit(&prepared.features.select_rows(&train_idx));
    let termination = match config.termination {
        TerminationChoice::Observed => {
            if let Some(i) = prepared.flags.iter().position(Option::is_none) {
                return Err(Error::TerminationSignalsUnavailable {
                    id: prepared.ids[i].clone(),
                });
            }
            TerminationModel::ObservedSignals
        }
        TerminationChoice::Learnable => TerminationModel::learnable_for(&data.subset(&train_idx)?),
        TerminationChoice::FixedTimeout(window) => TerminationModel::FixedTimeout { window },
    };
    let arch = Architecture {
        input_width: prepared.features.cols(),
        hidden_layers: config.hidden_layers,
        hidden_units: config.hidden_units,
        clusters: config.clusters,
        activation: config.activation,
        batch_norm: config.batch_norm,
    };
    let mut params = ModelParams::init(&arch, standardizer, termination, &mut rng);
    let mut adam = Adam::new(params.flat_len(), config.learning_rate);
    let mut best_params = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut record = EpochRecord {
            epoch,
            iterations: 0,
            noop_iterations: 0,
            skipped_pairs: 0,
            mean_train_loss: 0.0,
            val_objective: f64::NEG_INFINITY,
            best_val_objective: best_val,
            log_rate: None,
        };
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let out = batch_loss(&params, &prepared, batch, &config.divergence, config.l2, &mut rng)?;
            record.iterations += 1;
            record.skipped_pairs += out.skipped_pairs;
            if out.skipped_pairs > 0 {
                log::warn!(
                    "epoch {epoch}: skipped {} degenerate cluster pair(s)",
                    out.skipped_pairs
                );
            }
            if out.objective.is_none() {
                log::warn!("epoch {epoch}: every cluster pair degenerate; skipping update");
                record.noop_iterations += 1;
                continue;
            }
            if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient in epoch {epoch}"
                )));
            }
            loss_sum += out.loss;
            params.update_running_stats(&out.cache);
            let mut flat = params.to_flat();
            adam.step(&mut flat, &out.grad);
            params.set_flat(&flat);
        }
        let effective = record.iterations - record.noop_iterations;
        record.mean_train_loss = if effective > 0 {
            loss_sum / effective as f64
        } else {
            f64::NAN
        };
        record.log_rate = params.log_rate();

        let monitor = if val_idx.is_empty() { &train_idx } else { &val_idx };
        let val = evaluate_objective(
            &params,
            &prepared,
            monitor,
            &config.divergence,
            config.seed ^ VALIDATION_STREAM,
        )?;
        record.val_objective = val;
        if val > best_val {
            best_val = val;
            best_params = params.clone();
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        record.best_val_objective = best_val;
        log.epochs.push(record);
        if config.early_stop_patience > 0 && since_best >= config.early_stop_patience {
            log.stopped_early = true;
            break;
        }
    }
    Ok((best_params, log))
}

/// Hard labels (argmax, lowest index on ties) and soft memberships.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub alpha: Matrix,
}

pub fn argmax_labels(alpha: &Matrix) -> Vec<usize> {
    (0..alpha.rows())
        .map(|r| {
            let row = alpha.row(r);
            let mut best = 0;
            for (k, &a) in row.iter().enumerate() {
                if a > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn assign(params: &ModelParams, subjects: &[SubjectRecord], tau: Time) -> Result<Assignment> {
    if subjects.is_empty() {
        return Ok(Assignment {
            labels: Vec::new(),
            alpha: Matrix::zeros(0, params.n_clusters()),
        });
    }
    let features = feature_matrix(subjects, tau);
    let alpha = params.forward(&features, Mode::Inference)?;
    Ok(Assignment {
        labels: argmax_labels(&alpha),
        alpha,
    })
}
