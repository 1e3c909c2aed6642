mod common;

use common::nets::{random_transition, FEATURES};
use kmarl::env::{EnvConfig, JointAction, OffloadEnv};
use kmarl::mixers::MixerKind;
use kmarl::numkit::{Checkpoint, Eager, Gradients, Graph, Matrix, Reduce, Tape};
use kmarl::trainer::{
    collect_episode, train, write_metrics, Learner, ReplayBuffer, ToyEnv, TrainBatch, TrainConfig, Transition,
};
use kmarl::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(mixer: MixerKind, seed: u64) -> TrainConfig {
    TrainConfig {
        mixer,
        seed,
        episodes: 30,
        batch_size: 16,
        target_sync_interval: 10,
        ..TrainConfig::default()
    }
}

fn offload_env(n: usize, horizon: usize) -> OffloadEnv {
    let mut c = EnvConfig::with_layout(n, 2);
    c.horizon = horizon;
    OffloadEnv::new(c).unwrap()
}

fn zero(store: &mut ParamStore) {
    for p in store.iter_mut() {
        p.value = Matrix::zeros(p.value.rows(), p.value.cols());
    }
}

fn set(store: &mut ParamStore, name: &str, r: usize, c: usize, v: f64) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.get_mut(id).value.set(r, c, v);
}

fn gradients(learner: &Learner, batch: &TrainBatch, targets: &[f64]) -> Gradients<f64> {
    let mut tape = Tape::new(&learner.online);
    let loss = learner.model.loss(&mut tape, batch, targets).unwrap();
    tape.backward(loss).unwrap()
}

fn bits(g: &Gradients<f64>) -> Vec<u64> {
    g.iter()
        .flat_map(|(_, m)| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn greedy_zero_net_keeps_every_task_local() {
    let mut env = offload_env(3, 12);
    let mut learner = Learner::new(small_config(MixerKind::Vdn, 0), 3, FEATURES, 4).unwrap();
    zero(&mut learner.online);
    let mut buffer = ReplayBuffer::new(100);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    collect_episode(&mut env, &learner, 0.0, 5, &mut rng, &mut buffer).unwrap();
    assert_eq!(buffer.len(), 12);
    for t in buffer.iter() {
        assert_eq!(t.actions, JointAction::all_local(3));
    }
}

#[test]
fn episode_return_is_sum_of_stored_rewards() {
    let mut env = offload_env(4, 20);
    let learner = Learner::new(small_config(MixerKind::Kmarl, 3), 4, FEATURES, 4).unwrap();
    let mut buffer = ReplayBuffer::new(100);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let stats = collect_episode(&mut env, &learner, 0.5, 9, &mut rng, &mut buffer).unwrap();
    let stored: f64 = buffer.iter().map(|t| t.reward).sum();
    assert!((stats.episode_return - stored).abs() <= 1e-15);
    assert_eq!(stats.slots, 20);
    assert!(buffer.iter().last().unwrap().done);
    assert_eq!(buffer.iter().filter(|t| t.done).count(), 1);
}

#[test]
fn first_episode_fills_buffer_up_to_capacity() {
    for horizon in [50, 2500] {
        let mut env = offload_env(1, horizon);
        let learner = Learner::new(small_config(MixerKind::Vdn, 0), 1, FEATURES, 4).unwrap();
        let mut buffer = ReplayBuffer::new(2000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        collect_episode(&mut env, &learner, 1.0, 0, &mut rng, &mut buffer).unwrap();
        assert_eq!(buffer.len(), horizon.min(2000));
    }
}

#[test]
fn vdn_target_matches_hand_computation() {
    let config = TrainConfig {
        mixer: MixerKind::Vdn,
        reward_scale: 1.0,
        gamma: 0.9,
        ..TrainConfig::default()
    };
    let mut learner = Learner::new(config, 2, FEATURES, 4).unwrap();
    // utilities become [0.1, 0.2, x0, 0] for an input whose first feature is x0
    zero(&mut learner.target);
    set(&mut learner.target, "agent.l0.weight", 0, 0, 1.0);
    set(&mut learner.target, "agent.l1.weight", 0, 0, 1.0);
    set(&mut learner.target, "agent.l2.weight", 0, 2, 1.0);
    set(&mut learner.target, "agent.l2.bias", 0, 0, 0.1);
    set(&mut learner.target, "agent.l2.bias", 0, 1, 0.2);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = random_transition(2, 4, &mut rng);
    t.next_agent_inputs = Matrix::from_rows(&[[0.05, 0.3, 0.3, 0.3], [0.9, 0.1, 0.1, 0.1]]).unwrap();
    t.reward = -0.5;
    t.done = false;
    let mut terminal = t.clone();
    terminal.done = true;
    let batch = TrainBatch::new(&[&t, &terminal], 4).unwrap();

    let y = learner.model.td_targets(&learner.target, &batch, 0.9, 1.0).unwrap();
    assert!((y[0] - (-0.5 + 0.9 * (0.2 + 0.9))).abs() <= 1e-12, "{y:?}");
    assert_eq!(y[1], -0.5);
    let scaled = learner.model.td_targets(&learner.target, &batch, 0.9, 1000.0).unwrap();
    assert!((scaled[0] - (-500.0 + 0.9 * 1.1)).abs() <= 1e-9);
}

#[test]
fn loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = random_transition(3, 4, &mut rng);
    let batch = TrainBatch::new(&[&t], 4).unwrap();

    let mut learner = Learner::new(small_config(MixerKind::Vdn, 0), 3, FEATURES, 4).unwrap();
    zero(&mut learner.online);
    let mut g = Eager::new(&learner.online);
    let loss = learner.model.loss(&mut g, &batch, &[1.0]).unwrap();
    assert_eq!(g.value(&loss).item().unwrap(), 1.0);

    for kind in [MixerKind::Vdn, MixerKind::Qmix, MixerKind::Kmarl] {
        let learner = Learner::new(small_config(kind, 5), 3, FEATURES, 4).unwrap();
        let transitions: Vec<Transition> = (0..5).map(|_| random_transition(3, 4, &mut rng)).collect();
        let refs: Vec<&Transition> = transitions.iter().collect();
        let batch = TrainBatch::new(&refs, 4).unwrap();
        let mut g = Eager::new(&learner.online);
        let q = learner.model.chosen_q_tot(&mut g, &batch).unwrap();
        let fixed: Vec<f64> = g.value(&q).data().to_vec();
        let loss = learner.model.loss(&mut g, &batch, &fixed).unwrap();
        assert_eq!(g.value(&loss).item().unwrap(), 0.0, "{kind}");
    }
}

#[test]
fn target_parameters_never_receive_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in [MixerKind::Vdn, MixerKind::Qmix, MixerKind::Kmarl] {
        let mut learner = Learner::new(small_config(kind, 8), 4, FEATURES, 4).unwrap();
        let transitions: Vec<Transition> = (0..6).map(|_| random_transition(4, 4, &mut rng)).collect();
        let refs: Vec<&Transition> = transitions.iter().collect();
        let batch = TrainBatch::new(&refs, 4).unwrap();
        let (gamma, scale) = (0.9, 1.0);

        let cached = learner.model.td_targets(&learner.target, &batch, gamma, scale).unwrap();
        let before = gradients(&learner, &batch, &cached);

        for p in learner.target.iter_mut() {
            p.value = p.value.map(|v| v * 1.3 + 0.05);
        }
        assert_eq!(bits(&gradients(&learner, &batch, &cached)), bits(&before), "{kind}");

        // with recomputed targets the gradient moves only through the constant
        // residual shift: ∇ = ∇_cached − (2/B)·Σ_b (y'_b − y_b)·∇Q_b
        let fresh = learner.model.td_targets(&learner.target, &batch, gamma, scale).unwrap();
        assert!(fresh.iter().zip(&cached).any(|(a, b)| a != b));
        let after = gradients(&learner, &batch, &fresh);
        let weights: Vec<f64> = fresh
            .iter()
            .zip(&cached)
            .map(|(f, c)| -2.0 * (f - c) / batch.size as f64)
            .collect();
        let shift = {
            let mut tape = Tape::new(&learner.online);
            let q = learner.model.chosen_q_tot(&mut tape, &batch).unwrap();
            let w = tape.input(Matrix::column_vector(&weights));
            let weighted = tape.hadamard(&q, &w).unwrap();
            let total = tape.reduce(&weighted, Reduce::SumAll).unwrap();
            tape.backward(total).unwrap()
        };
        for (id, g) in after.iter() {
            let expected = before.get(id).unwrap().add(shift.get(id).unwrap()).unwrap();
            let scale = expected.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            assert!(g.max_abs_diff(&expected).unwrap() <= 1e-10 * scale, "{kind}");
        }
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buffer = ReplayBuffer::new(2000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..2500 {
        buffer.push(random_transition(1, 4, &mut rng));
    }
    assert_eq!(buffer.len(), 2000);
    let draws = 100_000;
    let mut counts = vec![0usize; buffer.len()];
    let mut sample_rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..draws / 100 {
        for i in buffer.sample_indices(100, &mut sample_rng) {
            counts[i] += 1;
        }
    }
    let k = counts.len() as f64;
    let expected = draws as f64 / k;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // the statistic has mean k−1 and standard deviation sqrt(2(k−1))
    let dof = k - 1.0;
    assert!((chi2 - dof).abs() <= 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2}");
    let sigma = (draws as f64 * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
    let worst = counts.iter().map(|&c| (c as f64 - expected).abs()).fold(0.0, f64::max);
    // Bonferroni bound over 2000 slots at 1e-3 family-wise level
    assert!(worst <= 4.6 * sigma, "worst deviation {worst}, sigma {sigma}");
}

fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        mixer: MixerKind::Vdn,
        reward_scale: 1.0,
        episodes: 2000,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_values_converge_to_rewards() {
    let mut env = ToyEnv::default();
    let out = train(&mut env, &toy_config(0), |_, _| Ok(())).unwrap();
    assert!(out.learner.steps <= 2000);
    let q = out
        .learner
        .model
        .agent
        .q_values(&out.learner.online, &env.observation)
        .unwrap();
    assert!((q[0] - env.rewards[0]).abs() <= 1e-2, "{q:?}");
    assert!((q[1] - env.rewards[1]).abs() <= 1e-2, "{q:?}");
}

#[test]
fn toy_smoothed_return_mostly_rises() {
    let mut env = ToyEnv::default();
    let out = train(&mut env, &toy_config(1), |_, _| Ok(())).unwrap();
    let s: Vec<f64> = out.metrics.iter().map(|m| m.smoothed_return).collect();
    let rising = s.windows(2).filter(|w| w[1] >= w[0] - 1e-12).count();
    let fraction = rising as f64 / (s.len() - 1) as f64;
    assert!(fraction >= 0.8, "non-decreasing fraction {fraction}");
}

fn metrics_bytes(config: &TrainConfig) -> Vec<u8> {
    let mut env = offload_env(3, 10);
    let out = train(&mut env, config, |_, _| Ok(())).unwrap();
    let mut bytes = Vec::new();
    write_metrics(&mut bytes, &out.metrics).unwrap();
    bytes
}

#[test]
fn same_seed_gives_identical_metric_bytes() {
    let config = small_config(MixerKind::Kmarl, 4);
    let a = metrics_bytes(&config);
    assert_eq!(a, metrics_bytes(&config));
    assert_ne!(a, metrics_bytes(&small_config(MixerKind::Kmarl, 5)));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), config.episodes + 1);
}

#[test]
fn vdn_and_qmix_differ_only_in_mixing() {
    let vdn = Learner::new(small_config(MixerKind::Vdn, 6), 3, FEATURES, 4).unwrap();
    let qmix = Learner::new(small_config(MixerKind::Qmix, 6), 3, FEATURES, 4).unwrap();
    let agent_values = |l: &Learner| -> Vec<Matrix<f64>> {
        l.online
            .iter()
            .filter(|p| p.name.starts_with("agent."))
            .map(|p| p.value.clone())
            .collect()
    };
    assert_eq!(agent_values(&vdn), agent_values(&qmix));

    let run = |mixer| {
        let mut env = offload_env(3, 10);
        train(&mut env, &small_config(mixer, 6), |_, _| Ok(())).unwrap()
    };
    let (v, q) = (run(MixerKind::Vdn), run(MixerKind::Qmix));
    assert_eq!(v.learner.steps, q.learner.steps);
    assert!(v.learner.steps > 0);
    let first_loss = |m: &[kmarl::trainer::MetricRow]| m.iter().position(|r| r.loss.is_some());
    assert_eq!(first_loss(&v.metrics), first_loss(&q.metrics));
}

#[test]
fn learner_checkpoint_round_trip() {
    let mut env = offload_env(3, 10);
    let out = train(&mut env, &small_config(MixerKind::Kmarl, 2), |_, _| Ok(())).unwrap();
    let mut bytes = Vec::new();
    out.learner.checkpoint(30).unwrap().write_to(&mut bytes).unwrap();
    let restored = Learner::from_checkpoint(&Checkpoint::read_from(&mut bytes.as_slice()).unwrap(), None).unwrap();
    assert!(restored.online.values_equal(&out.learner.online));
    assert!(restored.target.values_equal(&out.learner.online));
    assert_eq!(restored.steps, out.learner.steps);
    assert_eq!(restored.config, out.learner.config);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x = Matrix::from_fn(3, FEATURES, |_, _| rng.gen::<f64>());
        assert_eq!(
            restored.model.greedy(&restored.online, &x).unwrap(),
            out.learner.model.greedy(&out.learner.online, &x).unwrap()
        );
    }
}
