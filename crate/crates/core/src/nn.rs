//! A small dense feed-forward network library.
//!
//! Networks are a flat list of [`LayerSpec`]s. Dense layers hold weights of
//! shape `(fan_in, width)` so a batch `X` maps to `X W + b`. Dropout is
//! inverted (kept units are scaled by `1 / (1 - rate)` during training) and
//! batch normalization uses batch statistics in training and running
//! statistics at inference.
//!
//! Gradients are exact reverse-mode derivatives of the mean batch loss. All
//! randomness (initialization, shuffling, dropout masks) comes from seeded
//! streams, so training is reproducible bit for bit.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const BATCHNORM_MOMENTUM: f64 = 0.99;
pub const BATCHNORM_EPS: f64 = 1e-3;
/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` inside logs.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { width: usize },
    Relu,
    Identity,
    Softmax,
    Dropout { rate: f64 },
    BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CrossEntropy,
    /// Joint binary cross-entropy over the cumulative class probabilities.
    Jbce,
}

/// Training targets: real values for MSE, class labels otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Values(Array2<f64>),
    Labels(Vec<usize>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Values(v) => v.nrows(),
            Target::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Target {
        match self {
            Target::Values(v) => Target::Values(v.select(Axis(0), idx)),
            Target::Labels(l) => Target::Labels(idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds the shuffling and dropout streams.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: Loss, epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig { loss, epochs, batch_size, learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum LayerState {
    Dense { weights: Array2<f64>, bias: Array1<f64> },
    BatchNorm { gamma: Array1<f64>, beta: Array1<f64>, running_mean: Array1<f64>, running_var: Array1<f64> },
    Stateless,
}

/// Layer stack, parameters and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    input_width: usize,
    specs: Vec<LayerSpec>,
    layers: Vec<LayerState>,
    adam_m: Vec<Vec<f64>>,
    adam_v: Vec<Vec<f64>>,
    adam_t: u64,
    seed: u64,
}

/// Gradients aligned with [`NetworkState::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

enum Cache {
    Dense { input: Array2<f64>, sparse: bool },
    Relu { output: Array2<f64> },
    Identity,
    Softmax { output: Array2<f64> },
    Dropout { mask: Array2<f64> },
    BatchNorm { xhat: Array2<f64>, inv_std: Array1<f64> },
}

/// Everything a training-mode forward pass leaves for the backward pass.
pub struct Trace {
    caches: Vec<Cache>,
    pub output: Array2<f64>,
}

/// Serialized network: layer stack, flattened parameters, running
/// statistics, optimizer state and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    pub parameters: Vec<f64>,
    pub running_stats: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: u64,
    pub seed: u64,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Fraction of nonzero entries below which dense layers take the sparse path.
const SPARSE_DENSITY: f64 = 0.3;

fn density(x: &Array2<f64>) -> f64 {
    let nnz = x.iter().filter(|&&v| v != 0.0).count();
    nnz as f64 / (x.len().max(1)) as f64
}

/// `X W` visiting only the nonzero entries of `X`.
fn sparse_matmul(x: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), w.ncols()));
    for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
        for (j, &v) in xr.iter().enumerate() {
            if v != 0.0 {
                or.scaled_add(v, &w.row(j));
            }
        }
    }
    out
}

/// `X' D` visiting only the nonzero entries of `X`.
fn sparse_t_matmul(x: &Array2<f64>, d: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.ncols(), d.ncols()));
    for (xr, dr) in x.rows().into_iter().zip(d.rows()) {
        for (j, &v) in xr.iter().enumerate() {
            if v != 0.0 {
                out.row_mut(j).scaled_add(v, &dr);
            }
        }
    }
    out
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

impl NetworkState {
    /// Build a network with He-uniform weights on `±sqrt(6 / fan_in)`, zero
    /// biases and identity batch normalization.
    pub fn init(input_width: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::invalid("network input width must be >= 1"));
        }
        let mut rng = rng::stream(seed, Stream::Init);
        let mut width = input_width;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let state = match *spec {
                LayerSpec::Dense { width: out } => {
                    if out == 0 {
                        return Err(Error::invalid("dense width must be >= 1"));
                    }
                    let bound = (6.0 / width as f64).sqrt();
                    let weights = Array2::from_shape_simple_fn((width, out), || bound * (2.0 * rng::open_unit(&mut rng) - 1.0));
                    let state = LayerState::Dense { weights, bias: Array1::zeros(out) };
                    width = out;
                    state
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
                    }
                    LayerState::Stateless
                }
                LayerSpec::BatchNorm => LayerState::BatchNorm {
                    gamma: Array1::ones(width),
                    beta: Array1::zeros(width),
                    running_mean: Array1::zeros(width),
                    running_var: Array1::ones(width),
                },
                LayerSpec::Relu | LayerSpec::Identity | LayerSpec::Softmax => LayerState::Stateless,
            };
            layers.push(state);
        }
        let mut net = NetworkState { input_width, specs: specs.to_vec(), layers, adam_m: Vec::new(), adam_v: Vec::new(), adam_t: 0, seed };
        let sizes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
        net.adam_m = sizes.iter().map(|&n| vec![0.0; n]).collect();
        net.adam_v = sizes.iter().map(|&n| vec![0.0; n]).collect();
        Ok(net)
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerState::Dense { bias, .. } => Some(bias.len()),
                _ => None,
            })
            .unwrap_or(self.input_width)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_count(&self) -> u64 {
        self.adam_t
    }

    /// Trainable tensors in a fixed order: per dense layer weights then
    /// bias, per batch normalization layer scale then shift.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerState::Dense { weights, bias } => {
                    out.push(weights.as_slice().expect("standard layout"));
                    out.push(bias.as_slice().expect("standard layout"));
                }
                LayerState::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_slice().expect("standard layout"));
                    out.push(beta.as_slice().expect("standard layout"));
                }
                LayerState::Stateless => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerState::Dense { weights, bias } => {
                    out.push(weights.as_slice_mut().expect("standard layout"));
                    out.push(bias.as_slice_mut().expect("standard layout"));
                }
                LayerState::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_slice_mut().expect("standard layout"));
                    out.push(beta.as_slice_mut().expect("standard layout"));
                }
                LayerState::Stateless => {}
            }
        }
        out
    }

    /// Dense weight matrices, first layer first.
    pub fn dense_weights(&self) -> Vec<&Array2<f64>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerState::Dense { weights, .. } => Some(weights),
                _ => None,
            })
            .collect()
    }

    /// Running (mean, variance) of every batch normalization layer.
    pub fn running_stats(&self) -> Vec<(&Array1<f64>, &Array1<f64>)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerState::BatchNorm { running_mean, running_var, .. } => Some((running_mean, running_var)),
                _ => None,
            })
            .collect()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_width {
            return Err(Error::ShapeMismatch { what: "network input width", expected: self.input_width, found: x.ncols() });
        }
        Ok(())
    }

    /// Inference pass: no dropout, running batch-normalization statistics.
    pub fn forward_infer(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (spec, layer) in self.specs.iter().zip(&self.layers) {
            h = match (spec, layer) {
                (LayerSpec::Dense { .. }, LayerState::Dense { weights, bias }) => {
                    let mut out = if density(&h) < SPARSE_DENSITY { sparse_matmul(&h, weights) } else { h.dot(weights) };
                    out += bias;
                    out
                }
                (LayerSpec::Relu, _) => h.mapv_into(|v| v.max(0.0)),
                (LayerSpec::Softmax, _) => softmax_rows(&h),
                (LayerSpec::Identity, _) | (LayerSpec::Dropout { .. }, _) => h,
                (LayerSpec::BatchNorm, LayerState::BatchNorm { gamma, beta, running_mean, running_var }) => {
                    let scale = Zip::from(gamma).and(running_var).map_collect(|g, v| g / (v + BATCHNORM_EPS).sqrt());
                    let shift = beta - &(running_mean * &scale);
                    h * &scale + &shift
                }
                _ => unreachable!("layer state matches its spec"),
            };
        }
        Ok(h)
    }

    /// Training pass with batch statistics and fresh dropout masks from `rng`.
    /// Running statistics of batch normalization layers are updated.
    pub fn forward_train(&mut self, x: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Trace> {
        self.check_input(x)?;
        let n = x.nrows();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (spec, layer) in self.specs.iter().zip(self.layers.iter_mut()) {
            h = match (spec, layer) {
                (LayerSpec::Dense { .. }, LayerState::Dense { weights, bias }) => {
                    let sparse = density(&h) < SPARSE_DENSITY;
                    let mut out = if sparse { sparse_matmul(&h, weights) } else { h.dot(weights) };
                    out += &*bias;
                    caches.push(Cache::Dense { input: h, sparse });
                    out
                }
                (LayerSpec::Relu, _) => {
                    let out = h.mapv_into(|v| v.max(0.0));
                    caches.push(Cache::Relu { output: out.clone() });
                    out
                }
                (LayerSpec::Identity, _) => {
                    caches.push(Cache::Identity);
                    h
                }
                (LayerSpec::Softmax, _) => {
                    let out = softmax_rows(&h);
                    caches.push(Cache::Softmax { output: out.clone() });
                    out
                }
                (LayerSpec::Dropout { rate }, _) => {
                    let keep = 1.0 - rate;
                    let mask = Array2::from_shape_simple_fn(h.dim(), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    let out = h * &mask;
                    caches.push(Cache::Dropout { mask });
                    out
                }
                (LayerSpec::BatchNorm, LayerState::BatchNorm { gamma, beta, running_mean, running_var }) => {
                    if n < 2 {
                        return Err(Error::invalid("batch normalization needs at least 2 rows in training"));
                    }
                    let mean = h.mean_axis(Axis(0)).expect("nonempty");
                    let centered = h - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty");
                    let inv_std = var.mapv(|v| 1.0 / (v + BATCHNORM_EPS).sqrt());
                    let xhat = centered * &inv_std;
                    let out = &xhat * &*gamma + &*beta;
                    running_mean.zip_mut_with(&mean, |r, &m| *r = BATCHNORM_MOMENTUM * *r + (1.0 - BATCHNORM_MOMENTUM) * m);
                    running_var.zip_mut_with(&var, |r, &v| *r = BATCHNORM_MOMENTUM * *r + (1.0 - BATCHNORM_MOMENTUM) * v);
                    caches.push(Cache::BatchNorm { xhat, inv_std });
                    out
                }
                _ => unreachable!("layer state matches its spec"),
            };
        }
        Ok(Trace { caches, output: h })
    }

    /// Loss of `trace.output` against `target` and the gradient of that
    /// mean loss with respect to every parameter.
    pub fn backward(&self, trace: &Trace, target: &Target, loss: Loss) -> Result<(f64, Gradients)> {
        let value = loss_value(loss, &trace.output, target)?;
        let fused_softmax = loss == Loss::CrossEntropy && matches!(self.specs.last(), Some(LayerSpec::Softmax));
        let (mut grad, skip_last) = if fused_softmax {
            let Target::Labels(labels) = target else { unreachable!("checked by loss_value") };
            let mut g = trace.output.clone();
            let n = labels.len() as f64;
            for (mut row, &l) in g.rows_mut().into_iter().zip(labels) {
                row[l] -= 1.0;
                row /= n;
            }
            (g, true)
        } else {
            (loss_gradient(loss, &trace.output, target)?, false)
        };
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let first_dense = self.specs.iter().position(|s| matches!(s, LayerSpec::Dense { .. }));
        let count = self.layers.len();
        for idx in (0..count).rev() {
            let cache = &trace.caches[idx];
            let layer = &self.layers[idx];
            if idx == count - 1 && skip_last {
                per_layer.push(Vec::new());
                continue;
            }
            let needs_input_grad = first_dense.is_some_and(|f| idx > f);
            match (cache, layer) {
                (Cache::Dense { input, sparse }, LayerState::Dense { weights, .. }) => {
                    let dw = if *sparse { sparse_t_matmul(input, &grad) } else { input.t().dot(&grad) };
                    let db = grad.sum_axis(Axis(0));
                    per_layer.push(vec![dw.iter().copied().collect(), db.to_vec()]);
                    if needs_input_grad {
                        grad = grad.dot(&weights.t());
                    }
                }
                (Cache::Relu { output }, _) => {
                    Zip::from(&mut grad).and(output).for_each(|g, &o| {
                        if o <= 0.0 {
                            *g = 0.0
                        }
                    });
                    per_layer.push(Vec::new());
                }
                (Cache::Identity, _) => per_layer.push(Vec::new()),
                (Cache::Softmax { output }, _) => {
                    let dots = (&grad * output).sum_axis(Axis(1)).insert_axis(Axis(1));
                    grad = output * &(&grad - &dots);
                    per_layer.push(Vec::new());
                }
                (Cache::Dropout { mask }, _) => {
                    grad *= mask;
                    per_layer.push(Vec::new());
                }
                (Cache::BatchNorm { xhat, inv_std }, LayerState::BatchNorm { gamma, .. }) => {
                    let n = grad.nrows() as f64;
                    let dgamma = (&grad * xhat).sum_axis(Axis(0));
                    let dbeta = grad.sum_axis(Axis(0));
                    let dxhat = &grad * gamma;
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                    let mut dx = dxhat * n - &sum_d - &(xhat * &sum_dx);
                    dx *= &(inv_std / n);
                    grad = dx;
                    per_layer.push(vec![dgamma.to_vec(), dbeta.to_vec()]);
                }
                _ => unreachable!("cache matches layer"),
            }
        }
        let tensors = per_layer.into_iter().rev().flatten().collect();
        Ok((value, Gradients { tensors }))
    }

    /// One bias-corrected Adam update; increments the step counter.
    pub fn adam_step(&mut self, grads: &Gradients, config: &TrainConfig) -> Result<()> {
        let sizes: Vec<usize> = self.parameters().iter().map(|p| p.len()).collect();
        let ok = grads.tensors.len() == sizes.len() && grads.tensors.iter().zip(&sizes).all(|(g, &n)| g.len() == n);
        if !ok {
            return Err(Error::invalid("gradient shapes do not match the network parameters"));
        }
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = config.learning_rate;
        let eps = config.eps;
        let mut m_all = std::mem::take(&mut self.adam_m);
        let mut v_all = std::mem::take(&mut self.adam_v);
        for (((p, g), m), v) in self.parameters_mut().into_iter().zip(&grads.tensors).zip(&mut m_all).zip(&mut v_all) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.adam_m = m_all;
        self.adam_v = v_all;
        Ok(())
    }

    /// Mini-batch Adam training. Each epoch reshuffles the rows with the
    /// config's seed; a final batch of one row is merged into the previous
    /// batch. Returns the mean training loss of every epoch.
    pub fn train(&mut self, x: &Array2<f64>, target: &Target, config: &TrainConfig) -> Result<Vec<f64>> {
        if config.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if config.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        let n = x.nrows();
        if n == 0 {
            return Err(Error::invalid("training data is empty"));
        }
        if target.len() != n {
            return Err(Error::ShapeMismatch { what: "target rows", expected: n, found: target.len() });
        }
        self.check_input(x)?;
        let mut shuffle = rng::stream(config.seed, Stream::Shuffle);
        let mut dropout = rng::stream(config.seed, Stream::Dropout);
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let order = rng::permutation(n, &mut shuffle);
            let batches = batch_bounds(n, config.batch_size);
            let mut total = 0.0;
            for (lo, hi) in batches {
                let idx = &order[lo..hi];
                let xb = x.select(Axis(0), idx);
                let tb = target.select(idx);
                let trace = self.forward_train(&xb, &mut dropout)?;
                let (value, grads) = self.backward(&trace, &tb, config.loss)?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                total += value * (hi - lo) as f64;
                self.adam_step(&grads, config)?;
            }
            let mean = total / n as f64;
            if !mean.is_finite() || self.parameters().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            history.push(mean);
        }
        Ok(history)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let running_stats = self.running_stats().into_iter().flat_map(|(m, v)| m.iter().chain(v.iter()).cloned().collect::<Vec<_>>()).collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            input_width: self.input_width,
            layers: self.specs.clone(),
            parameters: self.parameters().concat(),
            running_stats,
            adam_m: self.adam_m.concat(),
            adam_v: self.adam_v.concat(),
            adam_t: self.adam_t,
            seed: self.seed,
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", cp.version)));
        }
        let mut net = NetworkState::init(cp.input_width, &cp.layers, cp.seed)?;
        let sizes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
        let total: usize = sizes.iter().sum();
        for (what, len) in [("checkpoint parameters", cp.parameters.len()), ("checkpoint adam m", cp.adam_m.len()), ("checkpoint adam v", cp.adam_v.len())] {
            if len != total {
                return Err(Error::ShapeMismatch { what, expected: total, found: len });
            }
        }
        let mut offset = 0;
        for (k, p) in net.parameters_mut().into_iter().enumerate() {
            let len = sizes[k];
            p.copy_from_slice(&cp.parameters[offset..offset + len]);
            offset += len;
        }
        let mut offset = 0;
        for (k, &len) in sizes.iter().enumerate() {
            net.adam_m[k].copy_from_slice(&cp.adam_m[offset..offset + len]);
            net.adam_v[k].copy_from_slice(&cp.adam_v[offset..offset + len]);
            offset += len;
        }
        let stats_len: usize = net.running_stats().iter().map(|(m, v)| m.len() + v.len()).sum();
        if cp.running_stats.len() != stats_len {
            return Err(Error::ShapeMismatch { what: "checkpoint running stats", expected: stats_len, found: cp.running_stats.len() });
        }
        let mut offset = 0;
        for layer in &mut net.layers {
            if let LayerState::BatchNorm { running_mean, running_var, .. } = layer {
                let w = running_mean.len();
                running_mean.assign(&Array1::from(cp.running_stats[offset..offset + w].to_vec()));
                running_var.assign(&Array1::from(cp.running_stats[offset + w..offset + 2 * w].to_vec()));
                offset += 2 * w;
            }
        }
        net.adam_t = cp.adam_t;
        Ok(net)
    }
}

/// Batch boundaries over `n` rows; a trailing batch of one row joins the
/// previous one.
pub fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch_size).map(|lo| (lo, (lo + batch_size).min(n))).collect();
    if out.len() >= 2 && out.last().is_some_and(|&(lo, hi)| hi - lo == 1) {
        let (_, hi) = out.pop().expect("len >= 2");
        out.last_mut().expect("len >= 1").1 = hi;
    }
    out
}

fn check_probabilities(output: &Array2<f64>) -> Result<()> {
    for (row, r) in output.rows().into_iter().enumerate() {
        let s = r.sum();
        if r.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidProbability { row });
        }
    }
    Ok(())
}

fn check_labels(output: &Array2<f64>, target: &Target) -> Result<Vec<usize>> {
    let Target::Labels(labels) = target else {
        return Err(Error::invalid("classification losses need label targets"));
    };
    if labels.len() != output.nrows() {
        return Err(Error::ShapeMismatch { what: "label count", expected: output.nrows(), found: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= output.ncols()) {
        return Err(Error::invalid(format!("label {bad} out of range for {} classes", output.ncols())));
    }
    check_probabilities(output)?;
    Ok(labels.clone())
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Mean loss over the rows of `output`.
///
/// * MSE averages the squared error over all entries.
/// * Cross-entropy is `-mean log p[label]`.
/// * JBCE sums, over the cut points `m = 1..M` of an `M + 1` class output,
///   the binary cross-entropy of the cumulative probability
///   `F_m = p_0 + ... + p_{m-1}` against the indicator `label < m`, and
///   averages that sum over rows.
pub fn loss_value(loss: Loss, output: &Array2<f64>, target: &Target) -> Result<f64> {
    match loss {
        Loss::Mse => {
            let Target::Values(y) = target else {
                return Err(Error::invalid("MSE needs real-valued targets"));
            };
            if y.dim() != output.dim() {
                return Err(Error::ShapeMismatch { what: "target shape", expected: output.len(), found: y.len() });
            }
            Ok(Zip::from(output).and(y).fold(0.0, |acc, &o, &t| acc + (o - t) * (o - t)) / output.len() as f64)
        }
        Loss::CrossEntropy => {
            let labels = check_labels(output, target)?;
            let total: f64 = labels.iter().enumerate().map(|(i, &l)| -clip(output[[i, l]]).ln()).sum();
            Ok(total / labels.len() as f64)
        }
        Loss::Jbce => {
            let labels = check_labels(output, target)?;
            let mut total = 0.0;
            for (i, &l) in labels.iter().enumerate() {
                let mut cum = 0.0;
                for m in 1..output.ncols() {
                    cum += output[[i, m - 1]];
                    let f = clip(cum);
                    total -= if l < m { f.ln() } else { (1.0 - f).ln() };
                }
            }
            Ok(total / labels.len() as f64)
        }
    }
}

/// Gradient of [`loss_value`] with respect to `output`.
pub fn loss_gradient(loss: Loss, output: &Array2<f64>, target: &Target) -> Result<Array2<f64>> {
    let mut g = Array2::zeros(output.dim());
    match loss {
        Loss::Mse => {
            let Target::Values(y) = target else {
                return Err(Error::invalid("MSE needs real-valued targets"));
            };
            if y.dim() != output.dim() {
                return Err(Error::ShapeMismatch { what: "target shape", expected: output.len(), found: y.len() });
            }
            let scale = 2.0 / output.len() as f64;
            Zip::from(&mut g).and(output).and(y).for_each(|g, &o, &t| *g = scale * (o - t));
        }
        Loss::CrossEntropy => {
            let labels = check_labels(output, target)?;
            let n = labels.len() as f64;
            for (i, &l) in labels.iter().enumerate() {
                let p = output[[i, l]];
                if p > PROB_CLIP && p < 1.0 - PROB_CLIP {
                    g[[i, l]] = -1.0 / (n * p);
                }
            }
        }
        Loss::Jbce => {
            let labels = check_labels(output, target)?;
            let n = labels.len() as f64;
            let k = output.ncols();
            let mut dfs = vec![0.0; k];
            for (i, &l) in labels.iter().enumerate() {
                let mut cum = 0.0;
                for m in 1..k {
                    cum += output[[i, m - 1]];
                    dfs[m] = if cum > PROB_CLIP && cum < 1.0 - PROB_CLIP {
                        if l < m { -1.0 / (n * cum) } else { 1.0 / (n * (1.0 - cum)) }
                    } else {
                        0.0
                    };
                }
                // p_j enters every F_m with m > j
                let mut suffix = 0.0;
                for j in (0..k).rev() {
                    if j + 1 < k {
                        suffix += dfs[j + 1];
                    }
                    g[[i, j]] = suffix;
                }
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_dense_layer_passes_input_through() {
        let mut net = NetworkState::init(3, &[LayerSpec::Dense { width: 3 }, LayerSpec::Identity], 1).unwrap();
        {
            let mut p = net.parameters_mut();
            p[0].copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        let x = array![[1.0, -2.0, 3.5], [0.0, 0.25, -1.0]];
        assert_eq!(net.forward_infer(&x).unwrap(), x);
    }

    #[test]
    fn activations() {
        let relu = NetworkState::init(3, &[LayerSpec::Relu], 0).unwrap();
        assert_eq!(relu.forward_infer(&array![[-1.0, 0.0, 2.0]]).unwrap(), array![[0.0, 0.0, 2.0]]);
        let sm = NetworkState::init(2, &[LayerSpec::Softmax], 0).unwrap();
        assert_eq!(sm.forward_infer(&array![[0.0, 0.0]]).unwrap(), array![[0.5, 0.5]]);
    }

    #[test]
    fn loss_examples() {
        let out = array![[0.5, 0.5]];
        let ce = loss_value(Loss::CrossEntropy, &out, &Target::Labels(vec![0])).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);
        let jb = loss_value(Loss::Jbce, &out, &Target::Labels(vec![0])).unwrap();
        assert!((jb - 2f64.ln()).abs() < 1e-15);
        let y = array![[1.0], [2.0]];
        assert_eq!(loss_value(Loss::Mse, &y, &Target::Values(y.clone())).unwrap(), 0.0);
        assert!(matches!(
            loss_value(Loss::CrossEntropy, &array![[0.7, 0.7]], &Target::Labels(vec![0])),
            Err(Error::InvalidProbability { row: 0 })
        ));
    }

    #[test]
    fn batches_merge_singleton_tail() {
        assert_eq!(batch_bounds(65, 32), vec![(0, 32), (32, 65)]);
        assert_eq!(batch_bounds(66, 32), vec![(0, 32), (32, 64), (64, 66)]);
        assert_eq!(batch_bounds(1, 32), vec![(0, 1)]);
    }

    #[test]
    fn batchnorm_rejects_single_row_in_training() {
        let mut net = NetworkState::init(2, &[LayerSpec::BatchNorm], 0).unwrap();
        let mut r = rng::stream(0, Stream::Dropout);
        assert!(net.forward_train(&array![[1.0, 2.0]], &mut r).is_err());
    }

    #[test]
    fn init_rejects_bad_specs() {
        assert!(NetworkState::init(2, &[LayerSpec::Dense { width: 0 }], 0).is_err());
        assert!(NetworkState::init(2, &[LayerSpec::Dropout { rate: 1.0 }], 0).is_err());
        assert!(NetworkState::init(0, &[LayerSpec::Relu], 0).is_err());
    }

    #[test]
    fn sparse_and_dense_products_agree() {
        let x = array![[0.0, 1.5, 0.0], [2.0, 0.0, 0.0]];
        let w = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(sparse_matmul(&x, &w), x.dot(&w));
        let d = array![[1.0, -1.0], [0.5, 2.0]];
        assert_eq!(sparse_t_matmul(&x, &d), x.t().dot(&d));
    }
}
