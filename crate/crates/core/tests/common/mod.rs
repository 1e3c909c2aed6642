//! Scalar reference evaluation of the latency model, written without the
//! library's helpers, plus small shared fixtures.
#![allow(dead_code)]

use kmarl::env::{EnvConfig, OffloadEnv, SlotState};

/// Per-vehicle latency of `choices` computed from first principles.
pub fn reference_latencies(state: &SlotState, c: &EnvConfig, choices: &[usize]) -> Vec<f64> {
    let r = c.num_rsus;
    let mut load = vec![0.0; r + 1];
    for (v, &a) in state.vehicles.iter().zip(choices) {
        if a > 0 {
            load[a - 1] += v.task.compute_demand;
        }
    }
    let mut out = Vec::new();
    for (i, (v, &a)) in state.vehicles.iter().zip(choices).enumerate() {
        if a == 0 {
            out.push(v.task.compute_demand / c.vehicle_cpu);
            continue;
        }
        let d = a - 1;
        let (cpu, bw, pos) = if d < r {
            (c.rsu_cpu, c.rsu_bandwidth, c.rsu_positions[d])
        } else {
            (c.mbs_cpu, c.mbs_bandwidth, c.mbs_position)
        };
        let f = v.task.compute_demand / load[d] * cpu;
        let dx = v.position[0] - pos[0];
        let dy = v.position[1] - pos[1];
        let s2 = dx * dx + dy * dy;
        let rate = bw * (1.0 + c.transmit_power * state.gains[i][d] / (c.noise_power * s2)).log2();
        out.push(v.task.compute_demand / f + v.task.data_size / rate);
    }
    out
}

pub fn reference_local(state: &SlotState, c: &EnvConfig) -> Vec<f64> {
    state
        .vehicles
        .iter()
        .map(|v| v.task.compute_demand / c.vehicle_cpu)
        .collect()
}

/// `−(1/I)·Σ(c·max(0, La − La_loc) + La)`.
pub fn reference_reward(state: &SlotState, c: &EnvConfig, choices: &[usize]) -> f64 {
    let la = reference_latencies(state, c, choices);
    let loc = reference_local(state, c);
    let mut total = 0.0;
    for (l, o) in la.iter().zip(&loc) {
        let eta = if l > o { c.penalty_coefficient * (l - o) } else { 0.0 };
        total += eta + l;
    }
    -total / la.len() as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Every joint action in lexicographic order with its reference mean latency.
pub fn enumerate(state: &SlotState, c: &EnvConfig) -> Vec<(Vec<usize>, f64)> {
    let n = state.vehicles.len();
    let base = c.num_actions();
    let mut out = Vec::new();
    let mut digits = vec![0usize; n];
    loop {
        out.push((digits.clone(), mean(&reference_latencies(state, c, &digits))));
        let mut k = n;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < base {
                break;
            }
            digits[k] = 0;
        }
    }
}

/// The first slot of an episode with the given layout and seed.
pub fn random_slot(num_vehicles: usize, num_rsus: usize, seed: u64) -> (SlotState, EnvConfig) {
    let config = EnvConfig::with_layout(num_vehicles, num_rsus);
    let mut env = OffloadEnv::new(config.clone()).unwrap();
    env.reset(seed).unwrap();
    (env.state().clone(), config)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub mod nets {
    use kmarl::agents::{AgentConfig, AgentNet};
    use kmarl::env::JointAction;
    use kmarl::mixers::{random_graph, MixBatch, Mixer, MixerConfig, MixerKind};
    use kmarl::numkit::{grad_check, GradCheckReport, Graph, Matrix, NodeId, Reduce, Tape};
    use kmarl::trainer::{Learner, TrainBatch, TrainConfig, Transition};
    use kmarl::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const FEATURES: usize = 4;
    pub const STEP: f64 = 1e-5;

    pub fn random_transition(num_agents: usize, num_actions: usize, rng: &mut impl Rng) -> Transition {
        let (obs, adj) = random_graph(num_agents, FEATURES, rng);
        let (next, next_adj) = random_graph(num_agents, FEATURES, rng);
        Transition {
            agent_inputs: obs.clone(),
            observations: obs,
            actions: JointAction::new((0..num_agents).map(|_| rng.gen_range(0..num_actions)).collect()),
            reward: rng.gen_range(-1e-3..0.0),
            next_agent_inputs: next.clone(),
            next_observations: next,
            adjacency: adj,
            next_adjacency: next_adj,
            done: rng.gen_bool(0.2),
        }
    }

    /// Parameter points are redrawn until every relu/abs input is at least
    /// this far from its kink, so central differences see a smooth function.
    pub const KINK_CLEARANCE: f64 = 10.0 * STEP;

    fn margin<F>(store: &ParamStore, forward: &F) -> f64
    where
        F: for<'s> Fn(&mut Tape<'s, f64>) -> kmarl::Result<NodeId>,
    {
        let mut tape = Tape::new(store);
        forward(&mut tape).unwrap();
        tape.kink_margin()
    }

    /// Agent net alone: sum of squared action values over a random batch of agents.
    pub fn agent_grad_check(seed: u64) -> GradCheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut store = ParamStore::new();
            let net = AgentNet::new(&mut store, FEATURES, 4, &AgentConfig::default(), &mut rng);
            let x = Matrix::from_fn(6, FEATURES, |_, _| rng.gen::<f64>());
            let forward = |tape: &mut Tape<'_, f64>| {
                let xi = tape.input(x.clone());
                let q = net.forward(tape, &xi)?;
                let sq = tape.hadamard(&q, &q)?;
                tape.reduce(&sq, Reduce::SumAll)
            };
            if margin(&store, &forward) >= KINK_CLEARANCE {
                return grad_check(&mut store, STEP, forward).unwrap();
            }
        }
    }

    /// Mixer alone on random utilities and graphs.
    pub fn mixer_grad_check(kind: MixerKind, num_agents: usize, seed: u64) -> GradCheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut store = ParamStore::new();
            let mixer = Mixer::new(
                kind,
                &mut store,
                num_agents,
                FEATURES,
                &MixerConfig::default(),
                &mut rng,
            );
            let graphs: Vec<_> = (0..3).map(|_| random_graph(num_agents, FEATURES, &mut rng)).collect();
            let feats: Vec<&Matrix<f64>> = graphs.iter().map(|g| &g.0).collect();
            let adjs: Vec<&Matrix<f64>> = graphs.iter().map(|g| &g.1).collect();
            let batch = MixBatch::new(&feats, &adjs).unwrap();
            let q = Matrix::from_fn(3, num_agents, |_, _| rng.gen_range(-2.0..2.0));
            let y = Matrix::from_fn(3, 1, |_, _| rng.gen_range(-2.0..2.0));
            let forward = |tape: &mut Tape<'_, f64>| {
                let qn = tape.input(q.clone());
                let out = mixer.forward(tape, &qn, &batch)?;
                let yn = tape.input(y.clone());
                let d = tape.sub(&out, &yn)?;
                let sq = tape.hadamard(&d, &d)?;
                tape.reduce(&sq, Reduce::SumAll)
            };
            if margin(&store, &forward) >= KINK_CLEARANCE {
                return grad_check(&mut store, STEP, forward).unwrap();
            }
        }
    }

    /// Agent net, chosen-action selection and mixer through the training loss.
    pub fn composition_grad_check(kind: MixerKind, num_agents: usize, seed: u64) -> GradCheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let config = TrainConfig {
                mixer: kind,
                seed: rng.gen(),
                ..TrainConfig::default()
            };
            let mut learner = Learner::new(config, num_agents, FEATURES, 4).unwrap();
            let transitions: Vec<Transition> = (0..4).map(|_| random_transition(num_agents, 4, &mut rng)).collect();
            let refs: Vec<&Transition> = transitions.iter().collect();
            let batch = TrainBatch::new(&refs, 4).unwrap();
            let targets: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let model = learner.model.clone();
            let forward = |tape: &mut Tape<'_, f64>| model.loss(tape, &batch, &targets);
            if margin(&learner.online, &forward) >= KINK_CLEARANCE {
                return grad_check(&mut learner.online, STEP, forward).unwrap();
            }
        }
    }
}

pub mod perm {
    use kmarl::mixers::{random_graph, MixBatch, Mixer};
    use kmarl::numkit::Matrix;
    use kmarl::ParamStore;
    use rand::Rng;

    pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            p.swap(i, rng.gen_range(0..=i));
        }
        p
    }

    /// `P·A·Pᵀ` for the row order `perm`.
    pub fn conjugate(a: &Matrix<f64>, perm: &[usize]) -> Matrix<f64> {
        Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(perm[i], perm[j]))
    }

    /// Relative change of `Q_tot` when agents are relabeled jointly in
    /// utilities, node features and adjacency.
    pub fn relabel_change(mixer: &Mixer, store: &ParamStore, n: usize, rng: &mut impl Rng) -> f64 {
        let (f, a) = random_graph(n, super::nets::FEATURES, rng);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let perm = random_permutation(n, rng);
        let qp: Vec<f64> = perm.iter().map(|&i| q[i]).collect();
        let base = mixer
            .q_tot(store, &Matrix::row_vector(&q), &MixBatch::single(&f, &a).unwrap())
            .unwrap()[0];
        let moved = mixer
            .q_tot(
                store,
                &Matrix::row_vector(&qp),
                &MixBatch::single(&f.permute_rows(&perm), &conjugate(&a, &perm)).unwrap(),
            )
            .unwrap()[0];
        (base - moved).abs() / base.abs().max(1.0)
    }

    /// Largest absolute `Q_tot` change over `trials` swaps of two agents.
    pub fn largest_swap_change(mixer: &Mixer, store: &ParamStore, n: usize, trials: usize, rng: &mut impl Rng) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let (f, a) = random_graph(n, super::nets::FEATURES, rng);
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.swap(0, 1);
            let qp: Vec<f64> = perm.iter().map(|&i| q[i]).collect();
            let base = mixer
                .q_tot(store, &Matrix::row_vector(&q), &MixBatch::single(&f, &a).unwrap())
                .unwrap()[0];
            let moved = mixer
                .q_tot(
                    store,
                    &Matrix::row_vector(&qp),
                    &MixBatch::single(&f.permute_rows(&perm), &conjugate(&a, &perm)).unwrap(),
                )
                .unwrap()[0];
            worst = worst.max((base - moved).abs());
        }
        worst
    }
}
