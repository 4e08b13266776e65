//! Experiment configuration.
//!
//! Configs are TOML. Every key is optional; omitted keys take the defaults
//! listed below. Unknown keys are rejected.
//!
//! ```toml
//! strategy = "fpp"            # fpp | poc | fedavg | trimmed_mean | median
//! rounds = 300
//! seed = 1                    # master seed
//! test_samples = 2000         # held-out set for the accuracy curve
//! output = "runs/fpp.csv"     # metrics CSV (optional)
//! checkpoint = "runs/fpp.ckpt"  # write the checkpoint on every approval (optional)
//! resume = "runs/fpp.ckpt"    # start from a checkpoint file (optional)
//!
//! [protocol]                  # overrides of the strategy preset
//! k = 6
//! k_prime = 9
//! gamma = 1.25
//! penalty = 0.85              # δp
//! recovery = 1.2              # δr
//! trim_count = 1              # β, trimmed_mean only
//! uniform_epochs = 1          # local epochs for uniformly selected trainers
//! aggregation = "mean"        # mean | trimmed_mean | median
//! privacy = "secure"          # secure | plain (fpp defaults to secure)
//!
//! [model]
//! layers = [10, 256, 256, 256, 6]
//!
//! [train]
//! learning_rate = 1e-3
//! batch_size = 8
//! local_epochs = 1
//!
//! [data]
//! clients = 12
//! features = 10
//! classes = 6
//! samples_min = 150
//! samples_max = 350
//! heterogeneity = 1.0         # σ
//! label_drift = 0.25          # ρ
//! seed = 7                    # default: derived from the master seed
//! path = "data/"              # load exported datasets instead of generating
//!
//! [[attackers]]
//! client = 0
//! kind = "noise"              # noise | reverse
//! noise_std = 1.0
//! scale = 20.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use fpp_core::actors::ClientBehavior;
use fpp_core::data::SynthSpec;
use fpp_core::secure::{AggregationKind, Privacy};
use fpp_core::seed::{self, Stream};
use fpp_core::server::StrategyConfig;
use fpp_core::{Architecture, TrainConfig};
use serde::Deserialize;

use crate::error::{Result, SimError};

pub const DEFAULT_ROUNDS: usize = 300;
pub const DEFAULT_TEST_SAMPLES: usize = 2000;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    strategy: Option<String>,
    rounds: Option<usize>,
    seed: Option<u64>,
    test_samples: Option<usize>,
    output: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    resume: Option<PathBuf>,
    #[serde(default)]
    protocol: RawProtocol,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    attackers: Vec<RawAttacker>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    k: Option<usize>,
    k_prime: Option<usize>,
    gamma: Option<f64>,
    penalty: Option<f64>,
    recovery: Option<f64>,
    trim_count: Option<usize>,
    uniform_epochs: Option<usize>,
    aggregation: Option<String>,
    privacy: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    layers: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    local_epochs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    clients: Option<usize>,
    features: Option<usize>,
    classes: Option<usize>,
    samples_min: Option<usize>,
    samples_max: Option<usize>,
    heterogeneity: Option<f64>,
    label_drift: Option<f64>,
    seed: Option<u64>,
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttacker {
    client: usize,
    kind: String,
    noise_std: Option<f64>,
    scale: Option<f64>,
}

/// Where client datasets come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// Directory written by `fpp gen-data`.
    Files(PathBuf),
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub strategy: StrategyConfig,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub data: DataSource,
    pub test_samples: usize,
    pub rounds: usize,
    pub attackers: Vec<(usize, ClientBehavior)>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

/// Strategy preset by name.
pub fn strategy_preset(name: &str) -> Option<StrategyConfig> {
    Some(match name {
        "fpp" => StrategyConfig::fpp(),
        "poc" | "power_of_choice" => StrategyConfig::power_of_choice(),
        "fedavg" => StrategyConfig::fedavg(),
        "trimmed_mean" | "trimmed" => StrategyConfig::trimmed_mean(),
        "median" => StrategyConfig::median(),
        _ => return None,
    })
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> SimError {
    SimError::Config(format!("{key}: {msg}"))
}

fn parse_aggregation(s: &str) -> Result<AggregationKind> {
    match s {
        "mean" => Ok(AggregationKind::Mean),
        "trimmed_mean" => Ok(AggregationKind::TrimmedMean),
        "median" => Ok(AggregationKind::Median),
        other => Err(config_err(
            "protocol.aggregation",
            format!("unknown aggregation `{other}` (mean, trimmed_mean, median)"),
        )),
    }
}

fn parse_privacy(s: &str) -> Result<Privacy> {
    match s {
        "secure" => Ok(Privacy::Secure),
        "plain" => Ok(Privacy::Plain),
        other => Err(config_err("protocol.privacy", format!("unknown privacy mode `{other}` (secure, plain)"))),
    }
}

impl ExperimentConfig {
    /// Defaults for the named strategy.
    pub fn for_strategy(name: &str) -> Result<Self> {
        let mut table = toml::Table::new();
        table.insert("strategy".into(), toml::Value::String(name.into()));
        Self::from_table(table)
    }

    /// Parse TOML text, then apply `key.path=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| SimError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let raw: RawConfig = table.try_into().map_err(|e: toml::de::Error| SimError::Config(e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let strategy_name = raw.strategy.as_deref().unwrap_or("fpp");
        let mut strategy = strategy_preset(strategy_name).ok_or_else(|| {
            config_err(
                "strategy",
                format!("unknown strategy `{strategy_name}` (fpp, poc, fedavg, trimmed_mean, median)"),
            )
        })?;
        let p = raw.protocol;
        if let Some(v) = p.k {
            strategy.k = v;
        }
        if let Some(v) = p.k_prime {
            strategy.k_prime = v;
        }
        if let Some(v) = p.gamma {
            strategy.gamma = v;
        }
        if let Some(v) = p.penalty {
            strategy.penalty = v;
        }
        if let Some(v) = p.recovery {
            strategy.recovery = v;
        }
        if let Some(v) = p.trim_count {
            strategy.trim_count = v;
        }
        if let Some(v) = p.uniform_epochs {
            strategy.uniform_epochs = v;
        }
        if let Some(v) = &p.aggregation {
            strategy.aggregation = parse_aggregation(v)?;
        }
        if let Some(v) = &p.privacy {
            strategy.privacy = parse_privacy(v)?;
        }

        let arch = match raw.model.layers {
            Some(layers) => Architecture::new(layers).map_err(|e| config_err("model.layers", e))?,
            None => Architecture::reference(),
        };

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: raw.train.learning_rate.unwrap_or(defaults.learning_rate),
            batch_size: raw.train.batch_size.unwrap_or(defaults.batch_size),
            local_epochs: raw.train.local_epochs.unwrap_or(defaults.local_epochs),
        };
        train.validate().map_err(|e| config_err("train", e))?;
        if train.learning_rate <= 0.0 {
            return Err(config_err("train.learning_rate", "must be positive"));
        }

        let seed = raw.seed.unwrap_or(0);
        let d = raw.data;
        let synth_default = SynthSpec::default();
        let spec = SynthSpec {
            n_clients: d.clients.unwrap_or(synth_default.n_clients),
            n_features: d.features.unwrap_or(arch.input_width()),
            n_classes: d.classes.unwrap_or(arch.n_classes()),
            samples_per_client: (
                d.samples_min.unwrap_or(synth_default.samples_per_client.0),
                d.samples_max.unwrap_or(synth_default.samples_per_client.1),
            ),
            heterogeneity: d.heterogeneity.unwrap_or(synth_default.heterogeneity),
            label_drift: d.label_drift.unwrap_or(synth_default.label_drift),
            seed: d.seed.unwrap_or_else(|| seed::derive(seed, Stream::Data, &[])),
        };
        let data = match d.path {
            Some(path) => DataSource::Files(path),
            None => {
                spec.validate().map_err(|e| config_err("data", e))?;
                if spec.n_features != arch.input_width() {
                    return Err(config_err(
                        "data.features",
                        format!("{} does not match the model input width {}", spec.n_features, arch.input_width()),
                    ));
                }
                if spec.n_classes != arch.n_classes() {
                    return Err(config_err(
                        "data.classes",
                        format!("{} does not match the model output width {}", spec.n_classes, arch.n_classes()),
                    ));
                }
                strategy.validate(spec.n_clients).map_err(|e| config_err("protocol", e))?;
                DataSource::Synthetic(spec)
            }
        };
        // File-backed registries are validated once their size is known.
        if let DataSource::Files(_) = data {
            fpp_core::secure::check_compatibility(strategy.aggregation, strategy.privacy)
                .map_err(|e| config_err("protocol", e))?;
        }

        let rounds = raw.rounds.unwrap_or(DEFAULT_ROUNDS);
        if rounds == 0 {
            return Err(config_err("rounds", "must be at least 1"));
        }
        let test_samples = raw.test_samples.unwrap_or(DEFAULT_TEST_SAMPLES);
        if test_samples == 0 {
            return Err(config_err("test_samples", "must be at least 1"));
        }

        let mut attackers = Vec::with_capacity(raw.attackers.len());
        for (i, a) in raw.attackers.into_iter().enumerate() {
            let key = format!("attackers[{i}]");
            let behavior = match a.kind.as_str() {
                "noise" => ClientBehavior::NoiseAttacker {
                    noise_std: a.noise_std.unwrap_or(ClientBehavior::DEFAULT_NOISE_STD),
                },
                "reverse" => ClientBehavior::ReverseAttacker {
                    scale: a.scale.unwrap_or(ClientBehavior::DEFAULT_REVERSE_SCALE),
                },
                other => return Err(config_err(&format!("{key}.kind"), format!("unknown attacker kind `{other}` (noise, reverse)"))),
            };
            behavior.validate().map_err(|e| config_err(&key, e))?;
            if let DataSource::Synthetic(spec) = &data {
                if a.client >= spec.n_clients {
                    return Err(config_err(
                        &format!("{key}.client"),
                        format!("index {} out of range for {} clients", a.client, spec.n_clients),
                    ));
                }
            }
            if attackers.iter().any(|(c, _)| *c == a.client) {
                return Err(config_err(&format!("{key}.client"), format!("client {} listed twice", a.client)));
            }
            attackers.push((a.client, behavior));
        }

        Ok(Self {
            strategy,
            arch,
            train,
            data,
            test_samples,
            rounds,
            attackers,
            seed,
            output: raw.output,
            checkpoint: raw.checkpoint,
            resume: raw.resume,
        })
    }
}

/// Read and validate a config file, applying `key.path=value` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    ExperimentConfig::from_toml_str(&text, overrides)
}

/// Set `a.b.c = value` in a TOML table. The value is parsed as TOML and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| SimError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| SimError::Config(format!("empty override key in `{assignment}`")))?;
    let mut node = table;
    for part in parts {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| SimError::Config(format!("{key}: `{part}` is not a table")))?;
    }
    node.insert(last.to_string(), parsed);
    Ok(())
}
