//! Non-iid synthetic classification data.
//!
//! A single global linear label model `(W_g, b_g)` is drawn once. Client `c`
//! gets a feature centre `u_c ~ N(0, σ²I)` and a perturbed label model
//! `W_c = W_g + σ·ρ·Δ_c` with `Δ_c ~ N(0, 1)`; its samples are
//! `x ~ N(u_c, I)` labelled `argmax(W_c·x + b_g)`. `σ` is the heterogeneity
//! knob and `ρ` scales how far client label rules drift from the global one.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{argmax, Dataset};
use crate::seed::{self, Stream};

/// Parameters of the synthetic federated task.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_clients: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Inclusive `[min, max]` range for per-client sample counts.
    pub samples_per_client: (usize, usize),
    /// Client heterogeneity σ.
    pub heterogeneity: f64,
    /// Relative scale ρ of per-client label-rule perturbations.
    pub label_drift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_clients: 12,
            n_features: 10,
            n_classes: 6,
            samples_per_client: (150, 350),
            heterogeneity: 1.0,
            label_drift: 0.25,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("n_clients must be positive"));
        }
        if self.n_features == 0 {
            return Err(Error::config("n_features must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes must be at least 2"));
        }
        let (min, max) = self.samples_per_client;
        if min == 0 || min > max {
            return Err(Error::config("samples_per_client must satisfy 1 <= min <= max"));
        }
        if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
            return Err(Error::config("heterogeneity must be finite and non-negative"));
        }
        if !(self.label_drift >= 0.0 && self.label_drift.is_finite()) {
            return Err(Error::config("label_drift must be finite and non-negative"));
        }
        Ok(())
    }
}

struct LabelModel {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

struct ClientModel {
    centre: Vec<f64>,
    weights: Vec<f64>,
}

fn normal_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

impl LabelModel {
    fn draw(spec: &SynthSpec) -> Self {
        let mut rng = seed::rng(seed::derive(spec.seed, Stream::Data, &[u64::MAX]));
        Self {
            weights: normal_vec(&mut rng, spec.n_classes * spec.n_features, 1.0),
            bias: normal_vec(&mut rng, spec.n_classes, 1.0),
        }
    }
}

impl ClientModel {
    fn draw<R: Rng>(spec: &SynthSpec, global: &LabelModel, rng: &mut R) -> Self {
        let sigma = spec.heterogeneity;
        let centre = normal_vec(rng, spec.n_features, sigma);
        let drift = sigma * spec.label_drift;
        let weights = global
            .weights
            .iter()
            .map(|w| w + drift * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { centre, weights }
    }

    fn sample<R: Rng>(&self, spec: &SynthSpec, bias: &[f64], rng: &mut R, features: &mut Vec<f64>) -> u32 {
        let start = features.len();
        for &m in &self.centre {
            features.push(m + rng.sample::<f64, _>(StandardNormal));
        }
        let x = &features[start..];
        let logits: Vec<f64> = self
            .weights
            .chunks_exact(spec.n_features)
            .zip(bias)
            .map(|(w, b)| w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        argmax(&logits) as u32
    }
}

fn client_models(spec: &SynthSpec) -> (LabelModel, Vec<(ClientModel, rand_chacha::ChaCha8Rng)>) {
    let global = LabelModel::draw(spec);
    let clients = (0..spec.n_clients)
        .map(|c| {
            let mut rng = seed::rng(seed::derive(spec.seed, Stream::Data, &[c as u64]));
            let model = ClientModel::draw(spec, &global, &mut rng);
            (model, rng)
        })
        .collect();
    (global, clients)
}

/// One dataset per client, deterministic in `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let (global, clients) = client_models(spec);
    let (min, max) = spec.samples_per_client;
    clients
        .into_iter()
        .map(|(model, mut rng)| {
            let n = rng.random_range(min..=max);
            let mut features = Vec::with_capacity(n * spec.n_features);
            let labels = (0..n)
                .map(|_| model.sample(spec, &global.bias, &mut rng, &mut features))
                .collect();
            Dataset::new(features, labels, spec.n_features, spec.n_classes)
        })
        .collect()
}

/// Held-out samples from the uniform mixture of all client distributions.
pub fn generate_test_set(spec: &SynthSpec, n_samples: usize) -> Result<Dataset> {
    spec.validate()?;
    if n_samples == 0 {
        return Err(Error::config("test set needs at least one sample"));
    }
    let (global, clients) = client_models(spec);
    let mut rng = seed::rng(seed::derive(spec.seed, Stream::TestSet, &[]));
    let mut features = Vec::with_capacity(n_samples * spec.n_features);
    let labels = (0..n_samples)
        .map(|_| {
            let c = rng.random_range(0..clients.len());
            clients[c].0.sample(spec, &global.bias, &mut rng, &mut features)
        })
        .collect();
    Dataset::new(features, labels, spec.n_features, spec.n_classes)
}

/// Per-class sample counts.
pub fn label_histogram(data: &Dataset, n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &y in data.labels() {
        counts[y as usize] += 1;
    }
    counts
}
