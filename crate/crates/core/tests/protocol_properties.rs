use fpp_core::actors::{self, ClientBehavior, ClientRecord};
use fpp_core::data::{self, SynthSpec};
use fpp_core::nn::{self, Architecture, Dataset, ParamVector, TrainConfig};
use fpp_core::secure::{FixedPointVector, Privacy};
use fpp_core::server::{self, Checkpoint, RecoveryRule, RoundContext, ServerState, StrategyConfig, Verdict};
use fpp_core::wire::{self, Message, Role};
use fpp_core::{seed, RoundReport};
use proptest::prelude::*;

fn small_world(n_clients: usize, seed: u64) -> (Architecture, Vec<Dataset>, Dataset) {
    let arch = Architecture::new(vec![10, 16, 6]).unwrap();
    let spec = SynthSpec {
        n_clients,
        samples_per_client: (30, 60),
        seed,
        ..SynthSpec::default()
    };
    (arch, data::generate(&spec).unwrap(), data::generate_test_set(&spec, 200).unwrap())
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        batch_size: 8,
        local_epochs: 1,
    }
}

fn run(strategy: StrategyConfig, attackers: &[(usize, ClientBehavior)], rounds: usize, seed: u64) -> (Vec<RoundReport>, Vec<ServerState>) {
    let (arch, clients, test) = small_world(6, seed);
    let mut registry = actors::build_registry(clients, attackers).unwrap();
    let train = train_cfg();
    let ctx = RoundContext {
        arch: &arch,
        train: &train,
        strategy: &strategy,
        master_seed: seed,
        test_set: &test,
    };
    let mut state = ServerState::new(nn::init_params(&arch, seed));
    let mut reports = Vec::new();
    let mut states = vec![state.clone()];
    for _ in 0..rounds {
        reports.push(server::run_round(&mut state, &mut registry, &ctx).unwrap());
        states.push(state.clone());
    }
    (reports, states)
}

fn small_fpp() -> StrategyConfig {
    StrategyConfig {
        k: 3,
        k_prime: 4,
        ..StrategyConfig::fpp()
    }
}

#[test]
fn honest_clients_with_loose_threshold_are_never_penalized() {
    let strategy = StrategyConfig { gamma: 10.0, ..small_fpp() };
    let (reports, _) = run(strategy, &[], 15, 2);
    assert!(reports.iter().all(|r| !r.recovered));
    assert!(reports.iter().all(|r| r.reputations.iter().all(|&(_, rep)| rep == 1.0)));
    for r in &reports {
        assert_eq!(r.preselected.len(), 4);
        assert_eq!(r.trainers.len(), 3);
        assert!(r.trainers.iter().all(|t| r.preselected.contains(t)));
    }
}

#[test]
fn forced_attacker_triggers_bitwise_recovery() {
    // Everyone trains every round, so the attacker is always in S_t.
    let strategy = StrategyConfig { k: 6, k_prime: 6, ..StrategyConfig::fpp() };
    let attack = [(2, ClientBehavior::NoiseAttacker { noise_std: 50.0 })];
    let (reports, states) = run(strategy, &attack, 6, 3);
    assert!(!reports[0].recovered);
    let mut recoveries = 0;
    for (t, r) in reports.iter().enumerate() {
        let (before, after) = (&states[t], &states[t + 1]);
        if r.recovered {
            recoveries += 1;
            let ck = before.checkpoint.as_ref().unwrap();
            assert_eq!(after.round_base.as_ref().unwrap(), &ck.params, "round {t}");
            assert_eq!(after.checkpoint.as_ref(), Some(ck), "checkpoint changed in round {t}");
            assert!(r.loss_estimate.unwrap() > ck.loss * strategy.gamma);
        }
    }
    assert!(recoveries >= 4, "{recoveries}");
    let rep = |id| reports.last().unwrap().reputations.iter().find(|r| r.0 == id).unwrap().1;
    assert!(rep(2) < 0.85f64.powi(3));
}

#[test]
fn identical_configs_give_identical_report_streams() {
    let attack = [(1, ClientBehavior::reverse())];
    let a = run(small_fpp(), &attack, 8, 4);
    let b = run(small_fpp(), &attack, 8, 4);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn secure_and_plain_rounds_agree_within_quantization() {
    let (arch, clients, test) = small_world(6, 5);
    let mut registry = actors::build_registry(clients, &[]).unwrap();
    let train = train_cfg();
    let secure = small_fpp();
    let plain = StrategyConfig { privacy: Privacy::Plain, ..secure };
    let mut state = ServerState::new(nn::init_params(&arch, 5));
    let tol = secure.k as f64 * 2f64.powi(-40);
    for _ in 0..10 {
        let mut plain_state = state.clone();
        let mut plain_registry = registry.clone();
        let ctx = |s| RoundContext {
            arch: &arch,
            train: &train,
            strategy: s,
            master_seed: 5,
            test_set: &test,
        };
        let rs = server::run_round(&mut state, &mut registry, &ctx(&secure)).unwrap();
        let rp = server::run_round(&mut plain_state, &mut plain_registry, &ctx(&plain)).unwrap();
        assert_eq!(rs.trainers, rp.trainers);
        for (a, b) in state.global.as_slice().iter().zip(plain_state.global.as_slice()) {
            assert!((a - b).abs() <= tol, "{a} vs {b}");
        }
    }
}

#[test]
fn baselines_skip_evaluation_or_recovery() {
    let attack = [(0, ClientBehavior::NoiseAttacker { noise_std: 50.0 })];
    let (fedavg, _) = run(StrategyConfig { k: 3, k_prime: 4, ..StrategyConfig::fedavg() }, &attack, 5, 6);
    assert!(fedavg.iter().all(|r| r.loss_estimate.is_none() && !r.recovered));
    let (poc, _) = run(StrategyConfig { k: 3, k_prime: 4, ..StrategyConfig::power_of_choice() }, &attack, 5, 6);
    assert!(poc.iter().all(|r| r.loss_estimate.is_some() && !r.recovered));
    assert!(poc.iter().all(|r| r.reputations.iter().all(|&(_, rep)| rep == 1.0)));
}

#[test]
fn reputation_returns_to_one_after_enough_approvals() {
    let rule = RecoveryRule {
        gamma: 1.25,
        penalty: 0.85,
        recovery: 1.2,
    };
    let (_, clients, _) = small_world(1, 7);
    for penalties in 1..12u32 {
        let mut reg = actors::build_registry(clients.clone(), &[]).unwrap();
        let mut global = ParamVector::new(vec![0.0]);
        let mut ck = Some(Checkpoint {
            params: global.clone(),
            loss: 1.0,
            round: 0,
        });
        for _ in 0..penalties {
            assert_eq!(
                server::evaluate_and_recover(2.0, 1, &mut ck, &mut global, &[0], &mut reg, rule),
                Verdict::Recovered
            );
        }
        let r = reg[0].reputation;
        assert_eq!(r, 0.85f64.powi(penalties as i32));
        let needed = ((1.0 / r).ln() / 1.2f64.ln()).ceil() as u32;
        let mut approvals = 0;
        while reg[0].reputation < 1.0 {
            server::evaluate_and_recover(1.0, 1, &mut ck, &mut global, &[0], &mut reg, rule);
            approvals += 1;
            assert!(approvals <= needed);
        }
        assert_eq!(approvals, needed, "after {penalties} penalties");
    }
}

fn closed_form(a: u32, b: u32) -> f64 {
    (0.85f64.powi(a as i32) * 1.2f64.powi(b as i32)).min(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reputation_trajectory_is_a_clamped_product(a in 0u32..30, b in 0u32..30) {
        let rule = RecoveryRule { gamma: 1.25, penalty: 0.85, recovery: 1.2 };
        let data = Dataset::new(vec![0.0], vec![0], 1, 2).unwrap();
        let mut reg = vec![ClientRecord::new(0, data, ClientBehavior::Honest)];
        let mut global = ParamVector::new(vec![1.0]);
        let mut ck = Some(Checkpoint { params: global.clone(), loss: 1.0, round: 0 });
        for _ in 0..a {
            server::evaluate_and_recover(5.0, 1, &mut ck, &mut global, &[0], &mut reg, rule);
        }
        for _ in 0..b {
            server::evaluate_and_recover(1.0, 1, &mut ck, &mut global, &[0], &mut reg, rule);
        }
        let r = reg[0].reputation;
        prop_assert!(r > 0.0 && r <= 1.0);
        prop_assert!((r - closed_form(a, b)).abs() <= 1e-12 * closed_form(a, b).max(1e-300));
    }

    #[test]
    fn trainer_choice_is_total(losses in prop::collection::vec(0.0f64..3.0, 1..15), k in 1usize..15) {
        let reports: Vec<(u64, f64)> = losses.iter().enumerate().map(|(i, &l)| ((i * 7 % 15) as u64, (l * 4.0).round() / 4.0)).collect();
        prop_assume!(k <= reports.len());
        let picked = server::select_trainers(&reports, k).unwrap();
        prop_assert_eq!(picked.len(), k);
        let mut reversed = reports.clone();
        reversed.reverse();
        prop_assert_eq!(&picked, &server::select_trainers(&reversed, k).unwrap());
        // Every picked loss is at least every unpicked loss.
        let min_picked = reports.iter().filter(|r| picked.contains(&r.0)).map(|r| r.1).fold(f64::INFINITY, f64::min);
        prop_assert!(reports.iter().filter(|r| !picked.contains(&r.0)).all(|r| r.1 <= min_picked));
    }

    #[test]
    fn robust_aggregators_match_sort_oracle(k in 1usize..=7, len in 1usize..=50, s in any::<u64>()) {
        use rand::Rng;
        let mut rng = seed::rng(s);
        let ups: Vec<ParamVector> = (0..k)
            .map(|_| ParamVector::new((0..len).map(|_| (rng.random::<f64>() - 0.5) * 10.0).collect()))
            .collect();
        let med = server::median(&ups).unwrap();
        let mean = server::mean(&ups).unwrap();
        for i in 0..len {
            let mut col: Vec<f64> = ups.iter().map(|u| u.as_slice()[i]).collect();
            let naive_mean = col.iter().sum::<f64>() / k as f64;
            prop_assert!((mean.as_slice()[i] - naive_mean).abs() <= 1e-12);
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = if k % 2 == 1 { col[k / 2] } else { (col[k / 2 - 1] + col[k / 2]) / 2.0 };
            prop_assert_eq!(med.as_slice()[i], m);
            for beta in 0..k.div_ceil(2) {
                if 2 * beta < k {
                    let kept = &col[beta..k - beta];
                    let t = server::trimmed_mean(&ups, beta).unwrap();
                    prop_assert_eq!(t.as_slice()[i], kept.iter().sum::<f64>() / kept.len() as f64);
                }
            }
        }
    }

    #[test]
    fn estimate_matches_scalar_oracle(losses in prop::collection::vec(0.0f64..10.0, 1..20)) {
        let reports: Vec<(u64, f64)> = losses.iter().enumerate().map(|(i, &l)| (i as u64, l)).collect();
        let mut acc = 0.0;
        for l in &losses {
            acc += l;
        }
        prop_assert!((server::estimate_global_loss(&reports).unwrap() - acc / losses.len() as f64).abs() < 1e-12);
    }
}

// ---- actors ----

fn one_client(behavior: ClientBehavior) -> (Architecture, ClientRecord) {
    let (arch, clients, _) = small_world(1, 8);
    (arch, ClientRecord::new(0, clients.into_iter().next().unwrap(), behavior))
}

#[test]
fn evaluation_is_truthful_for_every_behavior() {
    for b in [ClientBehavior::Honest, ClientBehavior::noise(), ClientBehavior::reverse()] {
        let (arch, c) = one_client(b);
        let zeros = ParamVector::zeros(arch.param_count());
        let loss = actors::client_evaluate(&c, &zeros, &arch).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-9);
        let p = nn::init_params(&arch, 1);
        assert_eq!(actors::client_evaluate(&c, &p, &arch).unwrap(), nn::loss_and_accuracy(&p, &arch, &c.dataset).unwrap().0);
    }
}

#[test]
fn honest_training_delegates_and_reverse_reflects() {
    let (arch, honest) = one_client(ClientBehavior::Honest);
    let g = nn::init_params(&arch, 2);
    let cfg = train_cfg();
    let h = actors::client_train(&honest, &g, &arch, &cfg, 3, 44).unwrap();
    assert_eq!(h, nn::local_train(&g, &arch, &honest.dataset, &cfg, 44).unwrap());
    for scale in [1.0, 20.0] {
        let rev = ClientRecord {
            behavior: ClientBehavior::ReverseAttacker { scale },
            ..honest.clone()
        };
        let r = actors::client_train(&rev, &g, &arch, &cfg, 3, 44).unwrap();
        for ((r, h), g) in r.as_slice().iter().zip(h.as_slice()).zip(g.as_slice()) {
            let want = -scale * (h - g);
            assert!(((r - g) - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
    let frozen = TrainConfig { learning_rate: 0.0, ..cfg };
    let rev = ClientRecord {
        behavior: ClientBehavior::ReverseAttacker { scale: 1.0 },
        ..honest
    };
    assert_eq!(actors::client_train(&rev, &g, &arch, &frozen, 0, 1).unwrap(), g);
}

#[test]
fn noise_attacker_follows_its_distribution() {
    let arch = Architecture::new(vec![1000, 994, 6]).unwrap();
    assert!(arch.param_count() >= 1_000_000);
    let data = Dataset::new(vec![0.0; 1000], vec![0], 1000, 6).unwrap();
    let c = ClientRecord::new(3, data, ClientBehavior::NoiseAttacker { noise_std: 2.0 });
    let g = ParamVector::new((0..arch.param_count()).map(|i| (i % 7) as f64 * 0.1).collect());
    let out = actors::client_train(&c, &g, &arch, &train_cfg(), 5, 9).unwrap();
    let diffs: Vec<f64> = out.as_slice().iter().zip(g.as_slice()).map(|(o, g)| o - g).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 5e-3, "{mean}");
    assert!((std - 2.0).abs() < 0.02, "{std}");
    assert_eq!(out, actors::client_train(&c, &g, &arch, &train_cfg(), 5, 9).unwrap());
}

// ---- wire ----

fn message_strategy() -> impl Strategy<Value = Message> {
    let floats = prop::collection::vec(any::<f64>(), 0..64);
    let ints = prop::collection::vec(any::<i128>(), 0..64);
    prop_oneof![
        (any::<u64>(), floats.clone()).prop_map(|(round, v)| Message::ModelBroadcast { round, params: ParamVector::new(v) }),
        (any::<u64>(), any::<u64>(), any::<f64>()).prop_map(|(round, client, loss)| Message::LossReport { round, client, loss }),
        (any::<u64>(), any::<u64>(), floats).prop_map(|(round, client, v)| Message::PlainUpdate { round, client, params: ParamVector::new(v) }),
        (any::<u64>(), any::<u64>(), ints).prop_map(|(round, client, v)| Message::MaskedUpdate { round, client, values: FixedPointVector::new(v) }),
        (any::<u64>(), any::<u64>(), any::<bool>()).prop_map(|(round, client, t)| Message::SelectionNotice {
            round,
            client,
            role: if t { Role::Train } else { Role::Evaluate }
        }),
    ]
}

/// Bitwise equality, so NaN payloads count too.
fn same_bits(a: &Message, b: &Message) -> bool {
    wire::serialize(a) == wire::serialize(b) && core::mem::discriminant(a) == core::mem::discriminant(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wire_roundtrip_is_identity(msg in message_strategy()) {
        let bytes = wire::serialize(&msg);
        let back = wire::deserialize(&bytes).unwrap();
        prop_assert!(same_bits(&msg, &back));
        if let (Message::PlainUpdate { params: a, .. }, Message::PlainUpdate { params: b, .. }) = (&msg, &back) {
            let bits = |p: &ParamVector| p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        if let (Message::MaskedUpdate { values: a, .. }, Message::MaskedUpdate { values: b, .. }) = (&msg, &back) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn damaged_frames_error_without_panicking(msg in message_strategy(), cut in any::<prop::sample::Index>(), flip in any::<(prop::sample::Index, u8)>()) {
        let bytes = wire::serialize(&msg);
        let n = cut.index(bytes.len());
        prop_assert!(wire::deserialize(&bytes[..n]).is_err());
        let mut bad = bytes.clone();
        bad.push(0);
        prop_assert!(wire::deserialize(&bad).is_err());
        let mut flipped = bytes;
        let i = flip.0.index(flipped.len());
        flipped[i] ^= flip.1;
        let _ = wire::deserialize(&flipped);
    }
}
