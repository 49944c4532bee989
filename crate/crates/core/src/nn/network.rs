//! Feedforward assignment network with hand-written reverse mode.
//!
//! Hidden layer: `linear -> [batch norm] -> activation`. Output layer: `linear -> softmax`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::features::Standardizer;
use crate::termination::TerminationModel;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm normalizes with batch statistics.
    Train,
    /// Batch norm normalizes with running statistics.
    Inference,
}

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weights);
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn width(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

/// Intermediate values kept for [`ModelParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every dense layer, the first being the standardized features.
    inputs: Vec<Matrix>,
    bn: Vec<BnCache>,
    pub alpha: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub standardizer: Standardizer,
    /// Hidden layers followed by the `K`-unit output layer.
    pub layers: Vec<Dense>,
    /// One entry per hidden layer when batch norm is enabled, else empty.
    pub batch_norm: Vec<BatchNorm>,
    pub activation: Activation,
    /// Holds the unconstrained `log_rate` when termination is learnable.
    pub termination: TerminationModel,
}

/// Shape of a network to initialize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub input_width: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub clusters: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl ModelParams {
    /// Weights uniform on `+-1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        arch: &Architecture,
        standardizer: Standardizer,
        termination: TerminationModel,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(arch.hidden_layers + 1);
        let mut fan_in = arch.input_width;
        let widths = std::iter::repeat_n(arch.hidden_units, arch.hidden_layers)
            .chain(std::iter::once(arch.clusters));
        for width in widths {
            let limit = 1.0 / (fan_in.max(1) as f64).sqrt();
            let data = (0..fan_in * width)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            layers.push(Dense {
                weights: Matrix::from_vec(fan_in, width, data),
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        let batch_norm = if arch.batch_norm {
            (0..arch.hidden_layers)
                .map(|_| BatchNorm::new(arch.hidden_units))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            standardizer,
            layers,
            batch_norm,
            activation: arch.activation,
            termination,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn n_clusters(&self) -> usize {
        self.layers.last().map_or(0, Dense::width)
    }

    pub fn log_rate(&self) -> Option<f64> {
        match self.termination {
            TerminationModel::LearnableExponential { log_rate } => Some(log_rate),
            _ => None,
        }
    }

    /// Cluster probabilities for raw (unstandardized) feature rows.
    pub fn forward(&self, features: &Matrix, mode: Mode) -> Result<Matrix> {
        Ok(self.forward_cached(features, mode)?.alpha)
    }

    pub fn forward_cached(&self, features: &Matrix, mode: Mode) -> Result<ForwardCache> {
        if features.cols() != self.input_width() {
            return Err(Error::WidthMismatch {
                expected: self.input_width(),
                actual: features.cols(),
            });
        }
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut bn_caches = Vec::with_capacity(self.batch_norm.len());
        let mut x = self.standardizer.apply(features);
        for (l, layer) in self.layers[..hidden].iter().enumerate() {
            let mut z = layer.forward(&x);
            if let Some(bn) = self.batch_norm.get(l) {
                let (normed, cache) = batch_norm_forward(bn, &z, mode);
                z = normed;
                bn_caches.push(cache);
            }
            for v in z.as_mut_slice() {
                *v = self.activation.apply(*v);
            }
            inputs.push(std::mem::replace(&mut x, z));
        }
        let mut logits = self.layers[hidden].forward(&x);
        inputs.push(x);
        softmax_rows(&mut logits);
        Ok(ForwardCache {
            inputs,
            bn: bn_caches,
            alpha: logits,
        })
    }

    /// Folds the batch statistics of a training-mode pass into the running ones.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (bn, c) in self.batch_norm.iter_mut().zip(&cache.bn) {
            for i in 0..bn.running_mean.len() {
                bn.running_mean[i] =
                    (1.0 - BN_MOMENTUM) * bn.running_mean[i] + BN_MOMENTUM * c.batch_mean[i];
                bn.running_var[i] =
                    (1.0 - BN_MOMENTUM) * bn.running_var[i] + BN_MOMENTUM * c.batch_var[i];
            }
        }
    }

    /// Gradient of a scalar loss with respect to [`Self::to_flat`], given its
    /// gradient with respect to the cluster probabilities. The `log_rate` slot
    /// is left at zero.
    pub fn backward(&self, cache: &ForwardCache, grad_alpha: &Matrix) -> Vec<f64> {
        let mut flat = vec![0.0; self.flat_len()];
        let offsets = self.offsets();
        // softmax
        let alpha = &cache.alpha;
        let mut grad = Matrix::zeros(alpha.rows(), alpha.cols());
        for r in 0..alpha.rows() {
            let a = alpha.row(r);
            let g = grad_alpha.row(r);
            let dot: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
            for (out, (x, y)) in grad.row_mut(r).iter_mut().zip(a.iter().zip(g)) {
                *out = x * (y - dot);
            }
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let grad_w = input.t_matmul(&grad);
            let off = offsets.layers[l];
            flat[off..off + grad_w.as_slice().len()].copy_from_slice(grad_w.as_slice());
            let bias_off = off + grad_w.as_slice().len();
            for r in 0..grad.rows() {
                for (b, g) in flat[bias_off..bias_off + layer.width()]
                    .iter_mut()
                    .zip(grad.row(r))
                {
                    *b += g;
                }
            }
            if l == 0 {
                break;
            }
            // back through the previous hidden layer's activation and batch norm
            let mut upstream = grad.matmul_t(&layer.weights);
            for (g, &y) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                *g *= self.activation.grad_from_output(y);
            }
            if let Some(bn) = self.batch_norm.get(l - 1) {
                let off = offsets.batch_norm[l - 1];
                upstream = batch_norm_backward(bn, &cache.bn[l - 1], &upstream, &mut flat[off..]);
            }
            grad = upstream;
        }
        flat
    }

    fn offsets(&self) -> Offsets {
        let mut cursor = 0;
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            layers.push(cursor);
            cursor += layer.weights.as_slice().len() + layer.bias.len();
        }
        let mut batch_norm = Vec::with_capacity(self.batch_norm.len());
        for bn in &self.batch_norm {
            batch_norm.push(cursor);
            cursor += 2 * bn.gamma.len();
        }
        Offsets {
            layers,
            batch_norm,
            log_rate: cursor,
        }
    }

    /// Number of trainable scalars, including the `log_rate` slot.
    pub fn flat_len(&self) -> usize {
        self.offsets().log_rate + 1
    }

    /// Index of `log_rate` in the flat parameter vector.
    pub fn log_rate_index(&self) -> usize {
        self.offsets().log_rate
    }

    /// Trainable parameters in a fixed order: every layer's weights then bias,
    /// every batch norm's gamma then beta, and finally `log_rate` (zero when
    /// termination is not learnable).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        for bn in &self.batch_norm {
            out.extend_from_slice(&bn.gamma);
            out.extend_from_slice(&bn.beta);
        }
        out.push(self.log_rate().unwrap_or(0.0));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.flat_len(), "flat parameter length");
        let mut cursor = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[cursor..cursor + dst.len()]);
            cursor += dst.len();
        };
        for layer in &mut self.layers {
            take(layer.weights.as_mut_slice());
            take(&mut layer.bias);
        }
        for bn in &mut self.batch_norm {
            take(&mut bn.gamma);
            take(&mut bn.beta);
        }
        if let TerminationModel::LearnableExponential { log_rate } = &mut self.termination {
            *log_rate = flat[flat.len() - 1];
        }
    }

    /// `true` for flat entries subject to weight decay (dense weights only).
    pub fn l2_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.flat_len());
        for layer in &self.layers {
            mask.extend(std::iter::repeat_n(true, layer.weights.as_slice().len()));
            mask.extend(std::iter::repeat_n(false, layer.bias.len()));
        }
        for bn in &self.batch_norm {
            mask.extend(std::iter::repeat_n(false, 2 * bn.gamma.len()));
        }
        mask.push(false);
        mask
    }
}

struct Offsets {
    layers: Vec<usize>,
    batch_norm: Vec<usize>,
    log_rate: usize,
}

fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

fn batch_norm_forward(bn: &BatchNorm, z: &Matrix, mode: Mode) -> (Matrix, BnCache) {
    let (n, p) = (z.rows(), z.cols());
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; p];
            for r in 0..n {
                for (m, v) in mean.iter_mut().zip(z.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; p];
            for r in 0..n {
                for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        }
        Mode::Inference => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = z.clone();
    let mut out = z.clone();
    for r in 0..n {
        for c in 0..p {
            let xhat = (z[(r, c)] - mean[c]) * inv_std[c];
            normalized[(r, c)] = xhat;
            out[(r, c)] = bn.gamma[c] * xhat + bn.beta[c];
        }
    }
    (
        out,
        BnCache {
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Writes `d gamma` then `d beta` into `flat` and returns the gradient w.r.t. the
/// batch-norm input (training-mode statistics).
fn batch_norm_backward(bn: &BatchNorm, cache: &BnCache, grad_out: &Matrix, flat: &mut [f64]) -> Matrix {
    let (n, p) = (grad_out.rows(), grad_out.cols());
    let nf = n as f64;
    let mut grad_in = Matrix::zeros(n, p);
    for c in 0..p {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for r in 0..n {
            let g = grad_out[(r, c)];
            sum_g += g;
            sum_gx += g * cache.normalized[(r, c)];
        }
        flat[c] += sum_gx;
        flat[p + c] += sum_g;
        let scale = bn.gamma[c] * cache.inv_std[c] / nf;
        for r in 0..n {
            let xhat = cache.normalized[(r, c)];
            grad_in[(r, c)] = scale * (nf * grad_out[(r, c)] - sum_g - xhat * sum_gx);
        }
    }
    grad_in
}
