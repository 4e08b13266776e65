//! Server-side round protocol: client selection, aggregation, round
//! evaluation with checkpoint recovery, and reputation updates.
//!
//! A round of the loss-weighted protocol (`Selection::Fpp`) runs as follows:
//!
//! 1. preselect `k'` clients, sampling without replacement with weight `r_c`;
//! 2. broadcast the current model and collect each candidate's local loss;
//! 3. estimate the model's loss `e_t` as the mean report;
//! 4. if `e_t > e* · γ`, discard the model, restore the checkpoint, penalize
//!    the previous round's trainers by `δp`, then preselect again against the
//!    restored model (its estimate is `e*`, so it is not re-tested);
//!    otherwise checkpoint the model with `e_t` and reward the previous
//!    trainers by `δr`, capped at 1;
//! 5. the `k` candidates with the highest loss train;
//! 6. the uploads are averaged (optionally behind pairwise masks).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::actors::{self, ClientRecord};
use crate::error::{Error, Result};
use crate::nn::{self, Architecture, Dataset, ParamVector, TrainConfig};
use crate::secure::{self, AggregationKind, FixedPointVector, MaskingSession, Privacy};
use crate::seed::{self, Stream};
use crate::wire::{self, Message, Role};

/// How the `k` trainers of a round are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// `k` clients uniformly at random (FedAvg and the robust-aggregation baselines).
    UniformRandom,
    /// Preselect `k'` by dataset size, train the `k` with highest loss.
    PowerOfChoice,
    /// Preselect `k'` by reputation, evaluate and recover, train the `k` with highest loss.
    Fpp,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::UniformRandom => "uniform_random",
            Selection::PowerOfChoice => "power_of_choice",
            Selection::Fpp => "fpp",
        }
    }
}

/// Selection and aggregation hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub selection: Selection,
    pub aggregation: AggregationKind,
    pub privacy: Privacy,
    /// Trainers per round.
    pub k: usize,
    /// Preselected evaluators per round.
    pub k_prime: usize,
    /// Tolerated loss growth factor γ.
    pub gamma: f64,
    /// Reputation penalty factor δp.
    pub penalty: f64,
    /// Reputation recovery factor δr.
    pub recovery: f64,
    /// Values dropped from each end per coordinate by the trimmed mean (β).
    pub trim_count: usize,
    /// Local epochs used by uniformly selected trainers.
    pub uniform_epochs: usize,
}

impl StrategyConfig {
    /// Loss-weighted selection with recovery and reputation, mean aggregation behind masks.
    pub fn fpp() -> Self {
        Self {
            selection: Selection::Fpp,
            aggregation: AggregationKind::Mean,
            privacy: Privacy::Secure,
            k: 6,
            k_prime: 9,
            gamma: 1.25,
            penalty: 0.85,
            recovery: 1.2,
            trim_count: 1,
            uniform_epochs: 1,
        }
    }

    pub fn power_of_choice() -> Self {
        Self {
            selection: Selection::PowerOfChoice,
            privacy: Privacy::Plain,
            ..Self::fpp()
        }
    }

    pub fn fedavg() -> Self {
        Self {
            selection: Selection::UniformRandom,
            privacy: Privacy::Plain,
            ..Self::fpp()
        }
    }

    pub fn trimmed_mean() -> Self {
        Self {
            aggregation: AggregationKind::TrimmedMean,
            ..Self::fedavg()
        }
    }

    pub fn median() -> Self {
        Self {
            aggregation: AggregationKind::Median,
            ..Self::fedavg()
        }
    }

    /// Short label used in reports: `fpp`, `poc`, `fedavg`, `trimmed_mean` or `median`.
    pub fn label(&self) -> &'static str {
        match (self.selection, self.aggregation) {
            (Selection::Fpp, _) => "fpp",
            (Selection::PowerOfChoice, _) => "poc",
            (Selection::UniformRandom, AggregationKind::Mean) => "fedavg",
            (Selection::UniformRandom, AggregationKind::TrimmedMean) => "trimmed_mean",
            (Selection::UniformRandom, AggregationKind::Median) => "median",
        }
    }

    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if self.k == 0 || self.k > self.k_prime || self.k_prime > n_clients {
            return Err(Error::config(format!(
                "need 0 < k <= k' <= N, got k={}, k'={}, N={n_clients}",
                self.k, self.k_prime
            )));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be > 1, got {}", self.gamma)));
        }
        if !(self.penalty > 0.0 && self.penalty < 1.0) {
            return Err(Error::config(format!("penalty must lie in (0, 1), got {}", self.penalty)));
        }
        if !(self.recovery > 1.0 && self.recovery.is_finite()) {
            return Err(Error::config(format!("recovery must be > 1, got {}", self.recovery)));
        }
        if 2 * self.trim_count >= self.k {
            return Err(Error::config(format!(
                "trim_count {} leaves nothing to average among k={}",
                self.trim_count, self.k
            )));
        }
        if self.uniform_epochs == 0 {
            return Err(Error::config("uniform_epochs must be at least 1"));
        }
        secure::check_compatibility(self.aggregation, self.privacy)
    }

    /// Local epochs for this round's trainers.
    pub fn local_epochs(&self, train: &TrainConfig) -> usize {
        match self.selection {
            Selection::UniformRandom => self.uniform_epochs,
            _ => train.local_epochs,
        }
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self::fpp()
    }
}

/// Last approved model and its loss estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub loss: f64,
    pub round: u64,
}

/// Metrics of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    /// Candidates whose losses ranked the trainers (the second draw after a recovery).
    pub preselected: Vec<u64>,
    pub trainers: Vec<u64>,
    /// Loss estimate of the model evaluated at the start of the round.
    pub loss_estimate: Option<f64>,
    pub recovered: bool,
    /// Accuracy of the aggregated model on the held-out set.
    pub test_accuracy: f64,
    pub reputations: Vec<(u64, f64)>,
}

/// Outcome of the start-of-round evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Approved,
    Recovered,
}

/// Sample `count` distinct ids, each draw proportional to the remaining weights.
pub fn weighted_sample<R: Rng>(ids: &[u64], weights: &[f64], count: usize, rng: &mut R) -> Result<Vec<u64>> {
    if count > ids.len() {
        return Err(Error::config(format!(
            "cannot draw {count} clients from a pool of {}",
            ids.len()
        )));
    }
    if weights.len() != ids.len() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::input("selection weights must be positive and finite, one per client"));
    }
    let mut pool: Vec<(u64, f64)> = ids.iter().copied().zip(weights.iter().copied()).collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = pool.iter().map(|p| p.1).sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = pool.len() - 1;
        for (i, p) in pool.iter().enumerate() {
            acc += p.1;
            if target < acc {
                pick = i;
                break;
            }
        }
        out.push(pool.remove(pick).0);
    }
    Ok(out)
}

/// First-stage candidates: reputation-weighted for FPP, data-size-weighted for PoC.
pub fn preselect(registry: &[ClientRecord], selection: Selection, k_prime: usize, seed: u64) -> Result<Vec<u64>> {
    let ids: Vec<u64> = registry.iter().map(|c| c.id).collect();
    let weights: Vec<f64> = match selection {
        Selection::Fpp => registry.iter().map(|c| c.reputation).collect(),
        Selection::PowerOfChoice => registry.iter().map(|c| c.dataset.len() as f64).collect(),
        Selection::UniformRandom => vec![1.0; registry.len()],
    };
    weighted_sample(&ids, &weights, k_prime, &mut seed::rng(seed))
}

/// The `k` reporters with the largest loss; equal losses prefer the smaller id.
pub fn select_trainers(reports: &[(u64, f64)], k: usize) -> Result<Vec<u64>> {
    if reports.len() < k {
        return Err(Error::protocol(format!(
            "need {k} loss reports to select trainers, got {}",
            reports.len()
        )));
    }
    let mut ranked = reports.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|r| r.0).collect())
}

/// Mean of the reported losses.
pub fn estimate_global_loss(reports: &[(u64, f64)]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::protocol("no loss reports to estimate the global loss"));
    }
    Ok(reports.iter().map(|r| r.1).sum::<f64>() / reports.len() as f64)
}

/// Reputation update factors and the damage threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryRule {
    pub gamma: f64,
    pub penalty: f64,
    pub recovery: f64,
}

impl From<&StrategyConfig> for RecoveryRule {
    fn from(s: &StrategyConfig) -> Self {
        Self {
            gamma: s.gamma,
            penalty: s.penalty,
            recovery: s.recovery,
        }
    }
}

/// Judge the model that was just evaluated.
///
/// With no checkpoint yet (the first round) or `e_t <= e* · γ` the model is
/// checkpointed with `e_t` and every previous trainer gets `r ← min(1, r·δr)`.
/// Otherwise `global` is replaced by the checkpoint and every previous
/// trainer gets `r ← r·δp`. A non-finite estimate counts as deterioration.
pub fn evaluate_and_recover(
    estimate: f64,
    round: u64,
    checkpoint: &mut Option<Checkpoint>,
    global: &mut ParamVector,
    previous_trainers: &[u64],
    registry: &mut [ClientRecord],
    rule: RecoveryRule,
) -> Verdict {
    let deteriorated = match checkpoint {
        None => false,
        Some(ck) => !estimate.is_finite() || estimate > ck.loss * rule.gamma,
    };
    let verdict = if deteriorated {
        global.clone_from(&checkpoint.as_ref().unwrap().params);
        Verdict::Recovered
    } else {
        *checkpoint = Some(Checkpoint {
            params: global.clone(),
            loss: estimate,
            round,
        });
        Verdict::Approved
    };
    for client in registry.iter_mut().filter(|c| previous_trainers.contains(&c.id)) {
        client.reputation = match verdict {
            Verdict::Recovered => client.reputation * rule.penalty,
            Verdict::Approved => (client.reputation * rule.recovery).min(1.0),
        };
    }
    verdict
}

/// Uploads of one round's trainers.
#[derive(Debug, Clone, PartialEq)]
pub enum Uploads {
    Plain(Vec<ParamVector>),
    /// Masked shares ordered like `session.participants()`.
    Masked(MaskingSession, Vec<FixedPointVector>),
}

fn check_lengths(updates: &[ParamVector]) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| Error::protocol("no updates to aggregate"))?;
    if let Some(bad) = updates.iter().position(|u| u.len() != first.len()) {
        return Err(Error::input(format!(
            "update {bad} has length {}, expected {}",
            updates[bad].len(),
            first.len()
        )));
    }
    Ok(first.len())
}

/// Coordinate-wise arithmetic mean.
pub fn mean(updates: &[ParamVector]) -> Result<ParamVector> {
    let len = check_lengths(updates)?;
    let mut acc = vec![0.0; len];
    for u in updates {
        for (a, v) in acc.iter_mut().zip(u.as_slice()) {
            *a += v;
        }
    }
    let k = updates.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(ParamVector::new(acc))
}

fn per_coordinate(updates: &[ParamVector], reduce: impl Fn(&[f64]) -> f64) -> Result<ParamVector> {
    let len = check_lengths(updates)?;
    let mut column = vec![0.0; updates.len()];
    let out = (0..len)
        .map(|i| {
            for (c, u) in column.iter_mut().zip(updates) {
                *c = u.as_slice()[i];
            }
            column.sort_unstable_by(f64::total_cmp);
            reduce(&column)
        })
        .collect();
    Ok(ParamVector::new(out))
}

/// Per coordinate, drop the `trim` largest and `trim` smallest values and average the rest.
pub fn trimmed_mean(updates: &[ParamVector], trim: usize) -> Result<ParamVector> {
    if 2 * trim >= updates.len() {
        return Err(Error::input(format!(
            "cannot trim {trim} from each end of {} values",
            updates.len()
        )));
    }
    per_coordinate(updates, |sorted| {
        let kept = &sorted[trim..sorted.len() - trim];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

/// Per coordinate middle value; mean of the two middle values for an even count.
pub fn median(updates: &[ParamVector]) -> Result<ParamVector> {
    per_coordinate(updates, |sorted| {
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }
    })
}

/// Combine one round's uploads into the next global model.
pub fn aggregate(uploads: &Uploads, kind: AggregationKind, trim: usize) -> Result<ParamVector> {
    match uploads {
        Uploads::Plain(updates) => match kind {
            AggregationKind::Mean => mean(updates),
            AggregationKind::TrimmedMean => trimmed_mean(updates, trim),
            AggregationKind::Median => median(updates),
        },
        Uploads::Masked(session, shares) => {
            secure::check_compatibility(kind, Privacy::Secure)?;
            session.aggregate_masked(shares)
        }
    }
}

/// Mutable server state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Index of the next round to run.
    pub round: u64,
    pub global: ParamVector,
    pub checkpoint: Option<Checkpoint>,
    pub previous_trainers: Vec<u64>,
    /// Model the last round's trainers started from (after any recovery).
    pub round_base: Option<ParamVector>,
}

impl ServerState {
    pub fn new(initial: ParamVector) -> Self {
        Self {
            round: 0,
            global: initial,
            checkpoint: None,
            previous_trainers: Vec::new(),
            round_base: None,
        }
    }
}

/// Everything a round needs besides the state and the registry.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub arch: &'a Architecture,
    pub train: &'a TrainConfig,
    pub strategy: &'a StrategyConfig,
    pub master_seed: u64,
    pub test_set: &'a Dataset,
}

fn find(registry: &[ClientRecord], id: u64) -> Result<&ClientRecord> {
    registry
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::protocol(format!("client {id} is not registered")))
}

fn expect_model(msg: Message) -> Result<ParamVector> {
    match msg {
        Message::ModelBroadcast { params, .. } => Ok(params),
        _ => Err(Error::protocol("expected a model broadcast")),
    }
}

/// Broadcast `global` to `ids` and collect their loss reports over the wire.
fn collect_losses(registry: &[ClientRecord], ids: &[u64], global: &ParamVector, ctx: &RoundContext, round: u64) -> Result<Vec<(u64, f64)>> {
    let frame = wire::serialize(&Message::ModelBroadcast {
        round,
        params: global.clone(),
    });
    ids.iter()
        .map(|&id| {
            let client = find(registry, id)?;
            wire::transmit(&Message::SelectionNotice {
                round,
                client: id,
                role: Role::Evaluate,
            })?;
            let model = expect_model(wire::deserialize(&frame)?)?;
            let loss = actors::client_evaluate(client, &model, ctx.arch)?;
            match wire::transmit(&Message::LossReport { round, client: id, loss })? {
                Message::LossReport { client, loss, .. } if client == id => Ok((client, loss)),
                _ => Err(Error::protocol(format!("client {id} sent a malformed loss report"))),
            }
        })
        .collect()
}

/// Ask `trainers` to train from `base` and gather their uploads over the wire.
fn collect_uploads(registry: &[ClientRecord], trainers: &[u64], base: &ParamVector, ctx: &RoundContext, round: u64) -> Result<Uploads> {
    let frame = wire::serialize(&Message::ModelBroadcast {
        round,
        params: base.clone(),
    });
    let cfg = ctx.train.with_epochs(ctx.strategy.local_epochs(ctx.train));
    let session = match ctx.strategy.privacy {
        Privacy::Secure => Some(MaskingSession::new(
            trainers,
            base.len(),
            round,
            seed::derive(ctx.master_seed, Stream::Masking, &[]),
        )?),
        Privacy::Plain => None,
    };
    // Masked shares are summed in session (ascending id) order.
    let order: Vec<u64> = match &session {
        Some(s) => s.participants().to_vec(),
        None => trainers.to_vec(),
    };
    let mut plain = Vec::new();
    let mut masked = Vec::new();
    for &id in &order {
        let client = find(registry, id)?;
        wire::transmit(&Message::SelectionNotice {
            round,
            client: id,
            role: Role::Train,
        })?;
        let model = expect_model(wire::deserialize(&frame)?)?;
        let train_seed = seed::derive(ctx.master_seed, Stream::Training, &[id, round]);
        let update = actors::client_train(client, &model, ctx.arch, &cfg, round, train_seed)?;
        let msg = match &session {
            Some(s) => Message::MaskedUpdate {
                round,
                client: id,
                values: s.mask(id, &update)?,
            },
            None => Message::PlainUpdate {
                round,
                client: id,
                params: update,
            },
        };
        match wire::transmit(&msg)? {
            Message::PlainUpdate { client, params, .. } if client == id => plain.push(params),
            Message::MaskedUpdate { client, values, .. } if client == id => masked.push(values),
            _ => return Err(Error::protocol(format!("client {id} sent a malformed update"))),
        }
    }
    Ok(match session {
        Some(s) => Uploads::Masked(s, masked),
        None => Uploads::Plain(plain),
    })
}

/// Execute one federated round and advance `state`.
pub fn run_round(state: &mut ServerState, registry: &mut [ClientRecord], ctx: &RoundContext) -> Result<RoundReport> {
    let strategy = ctx.strategy;
    strategy.validate(registry.len())?;
    let round = state.round;
    let selection_seed = |attempt: u64| seed::derive(ctx.master_seed, Stream::Selection, &[round, attempt]);

    let mut recovered = false;
    let (preselected, trainers, loss_estimate) = match strategy.selection {
        Selection::UniformRandom => {
            let chosen = preselect(registry, Selection::UniformRandom, strategy.k, selection_seed(0))?;
            (chosen.clone(), chosen, None)
        }
        Selection::PowerOfChoice => {
            let candidates = preselect(registry, Selection::PowerOfChoice, strategy.k_prime, selection_seed(0))?;
            let reports = collect_losses(registry, &candidates, &state.global, ctx, round)?;
            let estimate = estimate_global_loss(&reports)?;
            (candidates, select_trainers(&reports, strategy.k)?, Some(estimate))
        }
        Selection::Fpp => {
            let mut candidates = preselect(registry, Selection::Fpp, strategy.k_prime, selection_seed(0))?;
            let mut reports = collect_losses(registry, &candidates, &state.global, ctx, round)?;
            let estimate = estimate_global_loss(&reports)?;
            let verdict = evaluate_and_recover(
                estimate,
                round,
                &mut state.checkpoint,
                &mut state.global,
                &state.previous_trainers,
                registry,
                RecoveryRule::from(strategy),
            );
            if verdict == Verdict::Recovered {
                recovered = true;
                candidates = preselect(registry, Selection::Fpp, strategy.k_prime, selection_seed(1))?;
                reports = collect_losses(registry, &candidates, &state.global, ctx, round)?;
            }
            (candidates, select_trainers(&reports, strategy.k)?, Some(estimate))
        }
    };

    let uploads = collect_uploads(registry, &trainers, &state.global, ctx, round)?;
    let next = aggregate(&uploads, strategy.aggregation, strategy.trim_count)?;
    let base = core::mem::replace(&mut state.global, next);
    state.round_base = Some(base);
    state.previous_trainers = trainers.clone();
    state.round += 1;

    let (_, test_accuracy) = nn::loss_and_accuracy(&state.global, ctx.arch, ctx.test_set)?;
    Ok(RoundReport {
        round,
        preselected,
        trainers,
        loss_estimate,
        recovered,
        test_accuracy,
        reputations: registry.iter().map(|c| (c.id, c.reputation)).collect(),
    })
}
