mod common;

use common::{reference_latencies, reference_reward, rel_close};
use kmarl::env::{
    adjacency, local_latency, resource_shares, slot_latencies, team_reward, ChannelGain, EnvConfig, JointAction,
    OffloadEnv, Placement, SlotOutcome, SlotState, TaskSpec, VehicleState,
};
use kmarl::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn task(data_size: f64, compute_demand: f64) -> TaskSpec {
    TaskSpec {
        data_size,
        compute_demand,
    }
}

fn vehicle(x: f64, y: f64, t: TaskSpec) -> VehicleState {
    VehicleState {
        position: [x, y],
        speed: 0.0,
        task: t,
    }
}

#[test]
fn reset_is_deterministic_and_shaped() {
    let mut a = OffloadEnv::new(EnvConfig::default()).unwrap();
    let mut b = OffloadEnv::new(EnvConfig::default()).unwrap();
    assert_eq!(a.reset(42).unwrap(), b.reset(42).unwrap());
    let joint = JointAction::new(vec![1, 0, 2, 5, 3, 0, 4, 1]);
    for _ in 0..10 {
        let (x, y) = (a.step(&joint).unwrap(), b.step(&joint).unwrap());
        assert_eq!(x.observations, y.observations);
        assert_eq!(x.reward.to_bits(), y.reward.to_bits());
    }
    let mut one = OffloadEnv::new(EnvConfig::with_layout(1, 2)).unwrap();
    let obs = one.reset(0).unwrap();
    assert_eq!(obs.len(), 1);
    assert_eq!(obs[0].to_array().len(), 4);
}

#[test]
fn task_sizes_come_from_the_configured_set() {
    let mut env = OffloadEnv::new(EnvConfig::with_layout(4, 2)).unwrap();
    let mut seen = [false; 3];
    for seed in 0..1000 {
        env.reset(seed).unwrap();
        for v in &env.state().vehicles {
            let k = [1.0, 1.5, 2.0].iter().position(|&s| s == v.task.data_size);
            let k = k.unwrap_or_else(|| panic!("size {}", v.task.data_size));
            seen[k] = true;
            let rho = v.task.compute_demand / v.task.data_size;
            assert!((100.0 - 1e-9..=200.0 + 1e-9).contains(&rho));
        }
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn invalid_config_names_the_field() {
    let c = EnvConfig {
        rsu_cpu: 0.0,
        ..EnvConfig::default()
    };
    match OffloadEnv::new(c) {
        Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "rsu_cpu"),
        other => panic!("{other:?}"),
    }
    let mut c = EnvConfig::default();
    c.rsu_positions.pop();
    assert!(OffloadEnv::new(c).unwrap_err().to_string().contains("rsu_positions"));
}

#[test]
fn local_latency_examples() {
    assert_eq!(local_latency(5e5f64, 5e5), 1.0);
    assert!((local_latency(400.0f64, 5e5) - 8.0e-4).abs() < 1e-18);
}

#[test]
fn shared_rsu_example() {
    let config = EnvConfig::with_layout(2, 1);
    let tasks = [task(1.0, 100.0), task(2.0, 300.0)];
    let shares = resource_shares(&JointAction::new(vec![1, 1]), &tasks, &config).unwrap();
    assert_eq!(shares.allocated, vec![Some(1.5e6), Some(4.5e6)]);
    assert_eq!(shares.loads[0], 400.0);
    for (t, f) in tasks.iter().zip(&shares.allocated) {
        assert!((t.compute_demand / f.unwrap() - 400.0 / 6e6).abs() < 1e-18);
    }

    let alone = resource_shares(&JointAction::new(vec![1, 0]), &tasks, &config).unwrap();
    assert_eq!(alone.allocated, vec![Some(6e6), None]);
}

#[test]
fn two_vehicles_on_one_rsu_match_scalar_reference() {
    let mut config = EnvConfig::with_layout(2, 1);
    config.channel_gain = ChannelGain::Constant;
    let state = SlotState {
        vehicles: vec![
            vehicle(900.0, 4.0, task(1.5, 225.0)),
            vehicle(1200.0, 0.0, task(2.0, 340.0)),
        ],
        gains: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
    };
    let out = slot_latencies(&JointAction::new(vec![1, 1]), &state, &config).unwrap();
    // RSU at x = 1000, y = −10; shared compute (225+340)/6e6
    let compute = 565.0 / 6e6;
    let rate = |dx: f64, dy: f64| 2e8 * (1.0 + 0.1 / (1e-9 * (dx * dx + dy * dy))).log2();
    let expect = [compute + 1.5 / rate(100.0, 14.0), compute + 2.0 / rate(200.0, 10.0)];
    for (got, want) in out.latencies.iter().zip(expect) {
        assert!(rel_close(*got, want, 1e-12), "{got} vs {want}");
    }
    assert_eq!(out.placements, vec![Placement::Rsu(0), Placement::Rsu(0)]);
    assert_eq!(out.latencies, reference_latencies(&state, &config, &[1, 1]));
}

#[test]
fn all_local_is_uncoupled() {
    let (state, config) = common::random_slot(5, 2, 3);
    let out = slot_latencies(&JointAction::all_local(5), &state, &config).unwrap();
    for (la, v) in out.latencies.iter().zip(&state.vehicles) {
        assert_eq!(*la, v.task.compute_demand / config.vehicle_cpu);
    }
    assert!(out.penalties.iter().all(|&p| p == 0.0));
}

fn outcome(latencies: Vec<f64>, local: Vec<f64>) -> SlotOutcome {
    let n = latencies.len();
    SlotOutcome {
        placements: vec![Placement::Local; n],
        compute_latencies: latencies.clone(),
        transmit_latencies: vec![0.0; n],
        penalties: vec![0.0; n],
        loads: vec![],
        team_reward: 0.0,
        latencies,
        local_latencies: local,
    }
}

#[test]
fn team_reward_examples() {
    let config = EnvConfig::default();
    assert!((team_reward(&outcome(vec![0.2, 0.4], vec![0.5, 0.5]), &config) + 0.3).abs() < 1e-15);
    // first vehicle overshoots local by 0.1
    let r = team_reward(&outcome(vec![0.6, 0.2], vec![0.5, 0.2]), &config);
    assert!((r + (0.1 + 0.6 + 0.2) / 2.0).abs() < 1e-15);
    let r = team_reward(&outcome(vec![0.3], vec![0.3]), &config);
    assert_eq!(r, -0.3);
}

#[test]
fn adjacency_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let vs: Vec<VehicleState> = (0..6)
            .map(|_| {
                vehicle(
                    rng.gen_range(0.0..2000.0),
                    rng.gen_range(0..4) as f64 * 4.0,
                    task(1.0, 100.0),
                )
            })
            .collect();
        let a = adjacency(&vs, 300.0);
        assert_eq!(a, a.transpose());
        assert!((0..6).all(|i| a.get(i, i) == 0.0));
        assert!(a.data().iter().all(|&x| x == 0.0 || x == 1.0));
        assert!(adjacency(&vs, 0.0).data().iter().all(|&x| x == 0.0));
        let full = adjacency(&vs, 2000.0 + 12.0);
        assert!((0..6).all(|i| (0..6).all(|j| full.get(i, j) == if i == j { 0.0 } else { 1.0 })));
    }
}

#[test]
fn mobility_follows_closed_form() {
    let mut c = EnvConfig::with_layout(5, 2);
    c.horizon = 300;
    let mut env = OffloadEnv::new(c.clone()).unwrap();
    env.reset(17).unwrap();
    let start: Vec<(f64, f64, f64)> = env
        .state()
        .vehicles
        .iter()
        .map(|v| (v.position[0], v.position[1], v.speed))
        .collect();
    for (_, _, s) in &start {
        assert!((c.speed_range[0]..=c.speed_range[1]).contains(s));
    }
    for t in 1..=299 {
        env.step(&JointAction::all_local(5)).unwrap();
        for (v, (x0, y0, s)) in env.state().vehicles.iter().zip(&start) {
            let x = (x0 + t as f64 * s).rem_euclid(c.road_length);
            assert!((v.position[0] - x).abs() < 1e-9);
            assert_eq!(v.position[1], *y0);
            assert_eq!(v.speed, *s);
        }
    }
}

#[test]
fn horizon_and_reward_composition() {
    let mut c = EnvConfig::with_layout(3, 2);
    c.horizon = 1;
    let mut env = OffloadEnv::new(c).unwrap();
    env.reset(0).unwrap();
    let state = env.state().clone();
    let joint = JointAction::new(vec![1, 2, 3]);
    let out = env.step(&joint).unwrap();
    assert!(out.done);
    assert_eq!(out.reward, team_reward(&out.outcome, env.config()));
    assert!(rel_close(
        out.reward,
        reference_reward(&state, env.config(), &[1, 2, 3]),
        1e-12
    ));
    assert!(matches!(env.step(&joint), Err(Error::EpisodeFinished(1))));
}

fn slot_and_actions() -> impl Strategy<Value = (u64, usize, usize, Vec<usize>)> {
    (1usize..=6, 1usize..=3, any::<u64>())
        .prop_flat_map(|(n, r, seed)| (Just(seed), Just(n), Just(r), prop::collection::vec(0..r + 2, n)))
}

proptest! {
    #[test]
    fn matches_scalar_reference((seed, n, r, actions) in slot_and_actions()) {
        let (state, config) = common::random_slot(n, r, seed);
        let out = slot_latencies(&JointAction::new(actions.clone()), &state, &config).unwrap();
        let want = reference_latencies(&state, &config, &actions);
        for (g, w) in out.latencies.iter().zip(&want) {
            prop_assert!(rel_close(*g, *w, 1e-12), "{} vs {}", g, w);
            prop_assert!(*g > 0.0);
        }
        prop_assert!(rel_close(out.team_reward, reference_reward(&state, &config, &actions), 1e-12));
    }

    #[test]
    fn congestion_identity((seed, n, r, actions) in slot_and_actions()) {
        let (state, config) = common::random_slot(n, r, seed);
        let out = slot_latencies(&JointAction::new(actions.clone()), &state, &config).unwrap();
        for (i, &a) in actions.iter().enumerate() {
            if a > 0 {
                let d = a - 1;
                let expect = out.loads[d] / config.destination_cpu(d);
                prop_assert!(rel_close(out.compute_latencies[i], expect, 1e-12));
            }
        }
        let tasks: Vec<TaskSpec> = state.vehicles.iter().map(|v| v.task).collect();
        let shares = resource_shares(&JointAction::new(actions.clone()), &tasks, &config).unwrap();
        for d in 0..config.num_destinations() {
            let total: f64 = actions.iter().zip(&shares.allocated)
                .filter(|(&a, _)| a == d + 1)
                .map(|(_, f)| f.unwrap())
                .sum();
            if total > 0.0 {
                prop_assert!(rel_close(total, config.destination_cpu(d), 1e-12));
            }
        }
    }

    #[test]
    fn leaving_a_destination_never_hurts_the_rest((seed, n, r, actions) in slot_and_actions(), pick in any::<prop::sample::Index>()) {
        let offloaded: Vec<usize> = (0..n).filter(|&i| actions[i] > 0).collect();
        prop_assume!(!offloaded.is_empty());
        let mover = offloaded[pick.index(offloaded.len())];
        let (state, config) = common::random_slot(n, r, seed);
        let before = slot_latencies(&JointAction::new(actions.clone()), &state, &config).unwrap();
        let mut moved = actions.clone();
        moved[mover] = 0;
        let after = slot_latencies(&JointAction::new(moved), &state, &config).unwrap();
        for i in (0..n).filter(|&i| i != mover) {
            prop_assert!(after.latencies[i] <= before.latencies[i] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn reward_decomposes((seed, n, r, actions) in slot_and_actions()) {
        let (state, config) = common::random_slot(n, r, seed);
        let out = slot_latencies(&JointAction::new(actions), &state, &config).unwrap();
        let sum: f64 = out.latencies.iter().zip(&out.local_latencies)
            .map(|(la, lo)| la + (la - lo).max(0.0) * config.penalty_coefficient)
            .sum();
        prop_assert_eq!(out.team_reward, team_reward(&out, &config));
        prop_assert!(rel_close(out.team_reward, -sum / n as f64, 1e-12));
    }

    #[test]
    fn observations_normalized_and_adjacency_symmetric(seed in any::<u64>(), n in 1usize..10) {
        let mut env = OffloadEnv::new(EnvConfig::with_layout(n, 2)).unwrap();
        env.reset(seed).unwrap();
        for _ in 0..5 {
            for o in env.observations() {
                prop_assert!(o.to_array().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            let a = env.adjacency();
            prop_assert_eq!(a.transpose(), a.clone());
            prop_assert!((0..n).all(|i| a.get(i, i) == 0.0));
            env.step(&JointAction::all_local(n)).unwrap();
        }
    }
}
