//! Client-side behaviour: honest training and the two poisoning attacks.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{self, Architecture, Dataset, ParamVector, TrainConfig};
use crate::seed;

/// What a client does when asked to train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClientBehavior {
    Honest,
    /// Uploads the broadcast model plus i.i.d. Gaussian noise instead of a trained model.
    NoiseAttacker { noise_std: f64 },
    /// Trains honestly, then uploads `global - scale * (trained - global)`.
    ReverseAttacker { scale: f64 },
}

impl ClientBehavior {
    pub const DEFAULT_NOISE_STD: f64 = 1.0;
    pub const DEFAULT_REVERSE_SCALE: f64 = 20.0;

    pub fn noise() -> Self {
        ClientBehavior::NoiseAttacker {
            noise_std: Self::DEFAULT_NOISE_STD,
        }
    }

    pub fn reverse() -> Self {
        ClientBehavior::ReverseAttacker {
            scale: Self::DEFAULT_REVERSE_SCALE,
        }
    }

    pub fn is_attacker(&self) -> bool {
        !matches!(self, ClientBehavior::Honest)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClientBehavior::Honest => "honest",
            ClientBehavior::NoiseAttacker { .. } => "noise",
            ClientBehavior::ReverseAttacker { .. } => "reverse",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ClientBehavior::Honest => Ok(()),
            ClientBehavior::NoiseAttacker { noise_std } if noise_std > 0.0 && noise_std.is_finite() => Ok(()),
            ClientBehavior::ReverseAttacker { scale } if scale > 0.0 && scale.is_finite() => Ok(()),
            other => Err(Error::config(format!("invalid attacker parameters: {other}"))),
        }
    }
}

impl fmt::Display for ClientBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientBehavior::Honest => f.write_str("honest"),
            ClientBehavior::NoiseAttacker { noise_std } => write!(f, "noise(std={noise_std})"),
            ClientBehavior::ReverseAttacker { scale } => write!(f, "reverse(scale={scale})"),
        }
    }
}

/// A client as the server sees it, plus its private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub id: u64,
    pub dataset: Dataset,
    pub behavior: ClientBehavior,
    /// Selection weight in `(0, 1]`.
    pub reputation: f64,
}

impl ClientRecord {
    pub fn new(id: u64, dataset: Dataset, behavior: ClientBehavior) -> Self {
        Self {
            id,
            dataset,
            behavior,
            reputation: 1.0,
        }
    }
}

/// Build a registry with ids `0..n`, honest unless listed in `attackers`.
pub fn build_registry(datasets: Vec<Dataset>, attackers: &[(usize, ClientBehavior)]) -> Result<Vec<ClientRecord>> {
    let n = datasets.len();
    let mut registry: Vec<ClientRecord> = datasets
        .into_iter()
        .enumerate()
        .map(|(i, d)| ClientRecord::new(i as u64, d, ClientBehavior::Honest))
        .collect();
    for &(idx, behavior) in attackers {
        behavior.validate()?;
        let record = registry
            .get_mut(idx)
            .ok_or_else(|| Error::config(format!("attacker index {idx} out of range for {n} clients")))?;
        record.behavior = behavior;
    }
    Ok(registry)
}

/// Local loss of the broadcast model. Every behaviour reports truthfully.
pub fn client_evaluate(record: &ClientRecord, global: &ParamVector, arch: &Architecture) -> Result<f64> {
    nn::loss_and_accuracy(global, arch, &record.dataset).map(|(loss, _)| loss)
}

/// The parameters this client uploads after being asked to train.
///
/// `seed` is this client's training seed for the round; the noise draw is
/// derived from it as well.
pub fn client_train(
    record: &ClientRecord,
    global: &ParamVector,
    arch: &Architecture,
    cfg: &TrainConfig,
    round: u64,
    seed: u64,
) -> Result<ParamVector> {
    match record.behavior {
        ClientBehavior::Honest => nn::local_train(global, arch, &record.dataset, cfg, seed),
        ClientBehavior::NoiseAttacker { noise_std } => {
            let mut rng = seed::rng(seed::derive(seed, seed::Stream::Attack, &[record.id, round]));
            Ok(ParamVector::new(
                global
                    .as_slice()
                    .iter()
                    .map(|w| w + noise_std * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ))
        }
        ClientBehavior::ReverseAttacker { scale } => {
            let trained = nn::local_train(global, arch, &record.dataset, cfg, seed)?;
            Ok(ParamVector::new(
                global
                    .as_slice()
                    .iter()
                    .zip(trained.as_slice())
                    .map(|(g, t)| g - scale * (t - g))
                    .collect(),
            ))
        }
    }
}
