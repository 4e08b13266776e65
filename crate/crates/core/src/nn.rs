//! Dense feed-forward network trained with plain mini-batch SGD.
//!
//! Parameters live in one flat [`ParamVector`]. Layout is layer-major: for
//! each layer `l` with `fan_in` inputs and `fan_out` outputs, the weight
//! matrix comes first as `fan_in` rows of `fan_out` values (entry `(i, j)`
//! at `offset + i * fan_out + j`), followed by the `fan_out` biases. Hidden
//! layers use ReLU, the output layer softmax, and the loss is mean
//! cross-entropy.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 8;

/// Layer widths of a ReLU MLP with softmax output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config("architecture needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(Self { layer_sizes })
    }

    /// `[10, 256, 256, 256, 6]`: three hidden ReLU layers of 256 and a 6-way softmax.
    pub fn reference() -> Self {
        Self {
            layer_sizes: vec![10, 256, 256, 256, 6],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(weight_offset, bias_offset, fan_in, fan_out)` per layer.
    pub fn layer_spans(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut spans = Vec::with_capacity(self.n_layers());
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            spans.push((offset, offset + fan_in * fan_out, fan_in, fan_out));
            offset += fan_in * fan_out + fan_out;
        }
        spans
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::reference()
    }
}

/// Flat model parameters (or a gradient in the same layout).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    fn check_arch(&self, arch: &Architecture) -> Result<()> {
        if self.len() != arch.param_count() {
            return Err(Error::input(alloc::format!(
                "parameter vector has {} entries, architecture needs {}",
                self.len(),
                arch.param_count()
            )));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u32>, n_features: usize, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::input("dataset must contain at least one sample"));
        }
        if n_features == 0 || n_classes == 0 {
            return Err(Error::input("dataset needs positive feature and class counts"));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::input(alloc::format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y as usize >= n_classes) {
            return Err(Error::input(alloc::format!("label {bad} outside [0, {n_classes})")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("features must be finite"));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Samples of `self` followed by samples of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.n_features != other.n_features || self.n_classes != other.n_classes {
            return Err(Error::input("cannot concatenate datasets of different shapes"));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(features, labels, self.n_features, self.n_classes)
    }

    fn check_arch(&self, arch: &Architecture) -> Result<()> {
        if self.n_features != arch.input_width() {
            return Err(Error::input(alloc::format!(
                "dataset has {} features, network expects {}",
                self.n_features,
                arch.input_width()
            )));
        }
        if self.n_classes > arch.n_classes() {
            return Err(Error::input(alloc::format!(
                "dataset has {} classes, network outputs {}",
                self.n_classes,
                arch.n_classes()
            )));
        }
        Ok(())
    }
}

/// Local SGD settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be a finite non-negative number"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs must be at least 1"));
        }
        Ok(())
    }

    pub fn with_epochs(self, local_epochs: usize) -> Self {
        Self { local_epochs, ..self }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: DEFAULT_BATCH_SIZE,
            local_epochs: 1,
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> ParamVector {
    let mut rng = seed::rng(seed);
    let mut values = vec![0.0; arch.param_count()];
    for (w_off, b_off, fan_in, fan_out) in arch.layer_spans() {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        for w in &mut values[w_off..b_off] {
            *w = (2.0 * rng.random::<f64>() - 1.0) * limit;
        }
    }
    ParamVector(values)
}

/// `out[r, :] = input[r, :] · W + b` for every row, skipping zero inputs.
fn affine(params: &[f64], span: (usize, usize, usize, usize), input: &[f64], rows: usize, out: &mut Vec<f64>) {
    let (w_off, b_off, fan_in, fan_out) = span;
    let weights = &params[w_off..b_off];
    let bias = &params[b_off..b_off + fan_out];
    out.clear();
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    for p in 0..fan_in {
        let w_row = &weights[p * fan_out..(p + 1) * fan_out];
        for r in 0..rows {
            let a = input[r * fan_in + p];
            if a != 0.0 {
                let z = &mut out[r * fan_out..(r + 1) * fan_out];
                for (z, w) in z.iter_mut().zip(w_row) {
                    *z += a * w;
                }
            }
        }
    }
}

/// Dot product with eight fixed partial sums, so it vectorizes and the
/// summation order does not depend on the target.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

fn softmax_rows(logits: &mut [f64], width: usize) {
    for row in logits.chunks_exact_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Per-layer activations for a batch; `acts[0]` is the input, the last entry
/// holds softmax probabilities.
fn forward_all(params: &[f64], arch: &Architecture, input: Vec<f64>, rows: usize) -> Vec<Vec<f64>> {
    let spans = arch.layer_spans();
    let mut acts = Vec::with_capacity(spans.len() + 1);
    acts.push(input);
    for (l, &span) in spans.iter().enumerate() {
        let mut out = Vec::with_capacity(rows * span.3);
        affine(params, span, &acts[l], rows, &mut out);
        if l + 1 < spans.len() {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        } else {
            softmax_rows(&mut out, span.3);
        }
        acts.push(out);
    }
    acts
}

fn check_features(arch: &Architecture, features: &[f64]) -> Result<usize> {
    let width = arch.input_width();
    if features.is_empty() || !features.len().is_multiple_of(width) {
        return Err(Error::input(alloc::format!(
            "feature buffer of {} values is not a non-empty matrix of width {width}",
            features.len()
        )));
    }
    Ok(features.len() / width)
}

/// Class probabilities for each row of a row-major feature matrix.
pub fn forward(params: &ParamVector, arch: &Architecture, features: &[f64]) -> Result<Vec<f64>> {
    params.check_arch(arch)?;
    let rows = check_features(arch, features)?;
    let mut acts = forward_all(params.as_slice(), arch, features.to_vec(), rows);
    Ok(acts.pop().unwrap())
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of one probability row against a label, with the probability floor applied.
#[inline]
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -libm::log(probs[label].max(PROB_FLOOR))
}

const EVAL_CHUNK: usize = 256;

/// Mean cross-entropy and accuracy over a dataset.
pub fn loss_and_accuracy(params: &ParamVector, arch: &Architecture, data: &Dataset) -> Result<(f64, f64)> {
    params.check_arch(arch)?;
    data.check_arch(arch)?;
    let classes = arch.n_classes();
    let width = data.n_features();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let input = data.features[start * width..end * width].to_vec();
        let acts = forward_all(params.as_slice(), arch, input, end - start);
        let probs = acts.last().unwrap();
        for (r, row) in probs.chunks_exact(classes).enumerate() {
            let y = data.labels[start + r] as usize;
            loss += cross_entropy(row, y);
            if argmax(row) == y {
                correct += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Gradient of mean cross-entropy over the rows `idx` of `data`, accumulated into `grad`.
fn backprop(params: &[f64], arch: &Architecture, data: &Dataset, idx: &[usize], grad: &mut [f64]) {
    let rows = idx.len();
    let width = data.n_features();
    let classes = arch.n_classes();
    let mut input = Vec::with_capacity(rows * width);
    for &i in idx {
        input.extend_from_slice(data.row(i));
    }
    let acts = forward_all(params, arch, input, rows);

    // d loss / d logits = (p - onehot) / rows
    let inv = 1.0 / rows as f64;
    let mut delta = acts.last().unwrap().clone();
    for (r, &i) in idx.iter().enumerate() {
        delta[r * classes + data.labels[i] as usize] -= 1.0;
    }
    for d in delta.iter_mut() {
        *d *= inv;
    }

    let spans = arch.layer_spans();
    for l in (0..spans.len()).rev() {
        let (w_off, b_off, fan_in, fan_out) = spans[l];
        let below = &acts[l];
        let weights = &params[w_off..b_off];

        let prev_delta = if l > 0 {
            let mut prev = vec![0.0; rows * fan_in];
            for p in 0..fan_in {
                let w_row = &weights[p * fan_out..(p + 1) * fan_out];
                for r in 0..rows {
                    if below[r * fan_in + p] > 0.0 {
                        let d = &delta[r * fan_out..(r + 1) * fan_out];
                        prev[r * fan_in + p] = dot(d, w_row);
                    }
                }
            }
            Some(prev)
        } else {
            None
        };

        let (g_w, g_b) = grad[w_off..b_off + fan_out].split_at_mut(b_off - w_off);
        for p in 0..fan_in {
            let g_row = &mut g_w[p * fan_out..(p + 1) * fan_out];
            for r in 0..rows {
                let a = below[r * fan_in + p];
                if a != 0.0 {
                    let d = &delta[r * fan_out..(r + 1) * fan_out];
                    for (g, d) in g_row.iter_mut().zip(d) {
                        *g += a * d;
                    }
                }
            }
        }
        for r in 0..rows {
            for (g, d) in g_b.iter_mut().zip(&delta[r * fan_out..(r + 1) * fan_out]) {
                *g += d;
            }
        }

        if let Some(prev) = prev_delta {
            delta = prev;
        }
    }
}

/// Full-batch gradient of mean cross-entropy, in parameter layout.
pub fn gradient(params: &ParamVector, arch: &Architecture, data: &Dataset) -> Result<ParamVector> {
    params.check_arch(arch)?;
    data.check_arch(arch)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.len()];
    backprop(params.as_slice(), arch, data, &idx, &mut grad);
    Ok(ParamVector(grad))
}

/// `cfg.local_epochs` epochs of mini-batch SGD starting from `params`.
///
/// Each epoch draws a fresh permutation from `seed`; within a batch, samples
/// are processed in ascending index order so a full batch always sums in the
/// same order.
pub fn local_train(
    params: &ParamVector,
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ParamVector> {
    params.check_arch(arch)?;
    data.check_arch(arch)?;
    cfg.validate()?;
    let mut current = params.clone();
    if cfg.learning_rate == 0.0 {
        return Ok(current);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.local_epochs {
        order.sort_unstable();
        let mut rng = seed::rng(seed::mix(seed, &[epoch as u64]));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend_from_slice(chunk);
            batch.sort_unstable();
            grad.iter_mut().for_each(|g| *g = 0.0);
            backprop(current.as_slice(), arch, data, &batch, &mut grad);
            for (w, g) in current.0.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
        }
    }
    Ok(current)
}
