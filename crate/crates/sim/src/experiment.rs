//! Driving experiments: data and registry setup, the round loop, metrics and
//! checkpoint files, and multi-strategy comparisons.

use std::path::{Path, PathBuf};

use fpp_core::actors::{self, ClientRecord};
use fpp_core::data;
use fpp_core::nn;
use fpp_core::seed::{self, Stream};
use fpp_core::server::{self, RoundContext};
use fpp_core::{Dataset, ParamVector, ServerState};

use crate::checkpoint_file;
use crate::config::{strategy_preset, DataSource, ExperimentConfig};
use crate::dataset_file;
use crate::error::{Result, SimError};
use crate::metrics::{self, MetricsRow, MetricsWriter};

/// Rounds averaged into [`Summary::final_accuracy`].
pub const FINAL_WINDOW: usize = 10;

/// Client datasets and the held-out test set for a config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Vec<Dataset>, Dataset)> {
    match &cfg.data {
        DataSource::Synthetic(spec) => Ok((data::generate(spec)?, data::generate_test_set(spec, cfg.test_samples)?)),
        DataSource::Files(dir) => dataset_file::import_dir(dir),
    }
}

/// Initial global parameters; depend only on the master seed and architecture.
pub fn initial_params(cfg: &ExperimentConfig) -> ParamVector {
    nn::init_params(&cfg.arch, seed::derive(cfg.seed, Stream::Init, &[]))
}

fn check_data(cfg: &ExperimentConfig, clients: &[Dataset], test: &Dataset) -> Result<()> {
    let (f, c) = (cfg.arch.input_width(), cfg.arch.n_classes());
    for d in clients.iter().chain([test]) {
        if d.n_features() != f || d.n_classes() != c {
            return Err(SimError::Config(format!(
                "data: datasets have {} features and {} classes, model expects {f} and {c}",
                d.n_features(),
                d.n_classes()
            )));
        }
    }
    cfg.strategy
        .validate(clients.len())
        .map_err(|e| SimError::Config(format!("protocol: {e}")))?;
    if let Some((i, _)) = cfg.attackers.iter().find(|(i, _)| *i >= clients.len()) {
        return Err(SimError::Config(format!(
            "attackers: client index {i} out of range for {} clients",
            clients.len()
        )));
    }
    Ok(())
}

/// One experiment, advanced a round at a time.
pub struct Experiment {
    cfg: ExperimentConfig,
    registry: Vec<ClientRecord>,
    test_set: Dataset,
    state: ServerState,
}

impl Experiment {
    /// Build data, registry and the initial model (or the resumed checkpoint).
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let (clients, test) = load_data(&cfg)?;
        Self::with_data(cfg, clients, test, None)
    }

    /// Use the given datasets; `initial` overrides the seed-derived starting model.
    pub fn with_data(cfg: ExperimentConfig, clients: Vec<Dataset>, test_set: Dataset, initial: Option<ParamVector>) -> Result<Self> {
        check_data(&cfg, &clients, &test_set)?;
        let registry = actors::build_registry(clients, &cfg.attackers)?;
        let mut state = ServerState::new(initial.unwrap_or_else(|| initial_params(&cfg)));
        if state.global.len() != cfg.arch.param_count() {
            return Err(SimError::Config(format!(
                "initial model has {} parameters, architecture needs {}",
                state.global.len(),
                cfg.arch.param_count()
            )));
        }
        if let Some(path) = &cfg.resume {
            let (arch, ck) = checkpoint_file::load(path)?;
            if arch != cfg.arch {
                return Err(SimError::Config(format!(
                    "resume: checkpoint architecture {:?} differs from model.layers {:?}",
                    arch.layer_sizes(),
                    cfg.arch.layer_sizes()
                )));
            }
            state.round = ck.round;
            state.global = ck.params.clone();
            state.checkpoint = Some(ck);
        }
        Ok(Self {
            cfg,
            registry,
            test_set,
            state,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn registry(&self) -> &[ClientRecord] {
        &self.registry
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test_set
    }

    pub fn is_finished(&self) -> bool {
        self.state.round >= self.cfg.rounds as u64
    }

    /// Run the next round and return its metrics row.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let ctx = RoundContext {
            arch: &self.cfg.arch,
            train: &self.cfg.train,
            strategy: &self.cfg.strategy,
            master_seed: self.cfg.seed,
            test_set: &self.test_set,
        };
        let report = server::run_round(&mut self.state, &mut self.registry, &ctx)?;
        Ok(MetricsRow::from_report(self.cfg.strategy.label(), &report))
    }
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub strategy: String,
    pub rounds: usize,
    /// Mean test accuracy over the last [`FINAL_WINDOW`] rounds.
    pub final_accuracy: f64,
    pub recovered_rounds: usize,
}

impl Summary {
    pub fn from_rows(rows: &[MetricsRow]) -> Self {
        let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
        let final_accuracy = if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().map(|r| r.test_accuracy).sum::<f64>() / tail.len() as f64
        };
        Self {
            strategy: rows.first().map(|r| r.strategy.clone()).unwrap_or_default(),
            rounds: rows.len(),
            final_accuracy,
            recovered_rounds: rows.iter().filter(|r| r.recovered).count(),
        }
    }
}

/// Rounds completed when test accuracy first reached `threshold`.
pub fn rounds_to_accuracy(rows: &[MetricsRow], threshold: f64) -> Option<u64> {
    rows.iter().find(|r| r.test_accuracy >= threshold).map(|r| r.round + 1)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

/// Drive an experiment to completion, writing metrics and checkpoints as
/// configured. `on_row` sees each row together with the post-round experiment.
pub fn drive(mut exp: Experiment, mut on_row: impl FnMut(&Experiment, &MetricsRow)) -> Result<RunOutput> {
    let mut writer = exp.cfg.output.as_deref().map(MetricsWriter::create).transpose()?;
    let mut rows = Vec::with_capacity(exp.cfg.rounds);
    while !exp.is_finished() {
        let saved_round = exp.state.checkpoint.as_ref().map(|c| c.round);
        let row = exp.step()?;
        if let Some(w) = writer.as_mut() {
            w.write(&row)?;
        }
        if let (Some(path), Some(ck)) = (&exp.cfg.checkpoint, &exp.state.checkpoint) {
            if saved_round != Some(ck.round) {
                checkpoint_file::save(path, &exp.cfg.arch, ck)?;
            }
        }
        on_row(&exp, &row);
        rows.push(row);
    }
    let summary = Summary::from_rows(&rows);
    Ok(RunOutput { rows, summary })
}

pub fn run_experiment(cfg: ExperimentConfig) -> Result<RunOutput> {
    drive(Experiment::new(cfg)?, |_, _| {})
}

/// Per-strategy results of a comparison.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RunOutput>,
}

impl Comparison {
    pub fn merged_rows(&self) -> Vec<MetricsRow> {
        self.runs.iter().flat_map(|r| r.rows.iter().cloned()).collect()
    }

    pub fn run(&self, strategy: &str) -> Option<&RunOutput> {
        self.runs.iter().find(|r| r.summary.strategy == strategy)
    }
}

/// Metrics file for one strategy of a comparison written to `merged`.
pub fn strategy_output(merged: &Path, strategy: &str) -> PathBuf {
    let stem = merged.file_stem().and_then(|s| s.to_str()).unwrap_or("compare");
    merged.with_file_name(format!("{stem}_{strategy}.csv"))
}

/// Run every strategy on the template's data and starting model.
///
/// Protocol overrides in the template apply to every strategy except the
/// selection, aggregation and privacy, which come from each preset. With an
/// output path, each strategy gets `<stem>_<strategy>.csv` beside the merged file.
pub fn compare_strategies(template: &ExperimentConfig, strategies: &[String]) -> Result<Comparison> {
    let (clients, test) = load_data(template)?;
    let initial = initial_params(template);
    let mut runs = Vec::with_capacity(strategies.len());
    for name in strategies {
        let preset = strategy_preset(name).ok_or_else(|| SimError::Config(format!("strategies: unknown strategy `{name}`")))?;
        let mut cfg = template.clone();
        cfg.strategy = fpp_core::StrategyConfig {
            selection: preset.selection,
            aggregation: preset.aggregation,
            privacy: preset.privacy,
            ..template.strategy
        };
        cfg.output = template.output.as_deref().map(|p| strategy_output(p, cfg.strategy.label()));
        cfg.checkpoint = None;
        cfg.resume = None;
        let exp = Experiment::with_data(cfg, clients.clone(), test.clone(), Some(initial.clone()))?;
        runs.push(drive(exp, |_, _| {})?);
    }
    let cmp = Comparison { runs };
    if let Some(path) = &template.output {
        metrics::write_all(path, &cmp.merged_rows())?;
    }
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(strategy: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            &format!(
                "strategy = \"{strategy}\"\nrounds = 4\nseed = 5\ntest_samples = 50\n\
                 [model]\nlayers = [10, 8, 6]\n[data]\nsamples_min = 20\nsamples_max = 30"
            ),
            &[],
        )
        .unwrap()
    }

    #[test]
    fn one_row_per_round() {
        let out = run_experiment(tiny("fpp")).unwrap();
        let rounds: Vec<u64> = out.rows.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![0, 1, 2, 3]);
        assert_eq!(out.summary.rounds, 4);
    }

    #[test]
    fn strategies_share_the_starting_model() {
        let a = Experiment::new(tiny("fpp")).unwrap();
        let b = Experiment::new(tiny("fedavg")).unwrap();
        assert_eq!(a.state().global, b.state().global);
    }

    #[test]
    fn summary_uses_last_window() {
        let rows: Vec<MetricsRow> = (0..15)
            .map(|i| MetricsRow {
                round: i,
                strategy: "x".into(),
                loss_estimate: None,
                test_accuracy: if i < 5 { 0.0 } else { 0.5 },
                recovered: i == 2,
                selected_ids: vec![],
                reputations: vec![],
            })
            .collect();
        let s = Summary::from_rows(&rows);
        assert_eq!(s.final_accuracy, 0.5);
        assert_eq!(s.recovered_rounds, 1);
        assert_eq!(rounds_to_accuracy(&rows, 0.4), Some(6));
        assert_eq!(rounds_to_accuracy(&rows, 0.9), None);
    }
}
