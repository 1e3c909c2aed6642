//! Ground truth for the per-slot offloading problem: exhaustive search,
//! a greedy baseline, and episode-level policy evaluation.
//!
//! Tasks do not persist across slots and actions do not move vehicles, so
//! minimizing total latency over a horizon is the same as minimizing each
//! slot independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{slot_latencies, EnvConfig, JointAction, Observation, OffloadEnv, SlotCosts, SlotState};
use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub best_joint: JointAction,
    pub best_mean_latency: f64,
    pub evaluated_count: u64,
}

fn search_space(num_vehicles: usize, num_actions: usize, cap: u64) -> Result<u64> {
    let count = (num_actions as f64).powi(num_vehicles as i32);
    if count > cap as f64 {
        return Err(Error::EnumerationCap { count, cap });
    }
    Ok(count as u64)
}

fn decode(mut index: u64, base: usize, digits: &mut [usize]) {
    for d in digits.iter_mut().rev() {
        *d = (index % base as u64) as usize;
        index /= base as u64;
    }
}

/// Best (lowest total, earliest index) joint action in `[lo, hi)` of the
/// lexicographic enumeration.
fn search_range(costs: &SlotCosts, base: usize, lo: u64, hi: u64) -> Option<(u64, f64, Vec<usize>)> {
    if lo >= hi {
        return None;
    }
    let n = costs.num_vehicles();
    let mut digits = vec![0; n];
    decode(lo, base, &mut digits);
    let mut loads = vec![0.0; costs.cpu.len()];
    let mut best: Option<(u64, f64, Vec<usize>)> = None;
    for index in lo..hi {
        let total = costs.total_latency(&digits, &mut loads);
        if best.as_ref().is_none_or(|(_, b, _)| total < *b) {
            best = Some((index, total, digits.clone()));
        }
        // odometer increment, last vehicle fastest
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < base {
                break;
            }
            *d = 0;
        }
    }
    best
}

/// Enumerates all `(R+2)^I` joint actions and returns the latency-minimal one;
/// ties go to the lexicographically smallest action.
pub fn exact_slot_optimum(state: &SlotState, config: &EnvConfig, cap: u64) -> Result<OracleResult> {
    exact_slot_optimum_parallel(state, config, cap, 1)
}

/// [`exact_slot_optimum`] with the index range split across `threads`.
/// Produces the identical result for any thread count.
pub fn exact_slot_optimum_parallel(
    state: &SlotState,
    config: &EnvConfig,
    cap: u64,
    threads: usize,
) -> Result<OracleResult> {
    let n = state.num_vehicles();
    let base = config.num_actions();
    let count = search_space(n, base, cap)?;
    let costs = SlotCosts::new(state, config)?;
    let threads = threads.clamp(1, count.max(1) as usize);
    let chunk = count.div_ceil(threads as u64);
    let partials: Vec<Option<(u64, f64, Vec<usize>)>> = if threads == 1 {
        vec![search_range(&costs, base, 0, count)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|t| {
                    let costs = &costs;
                    s.spawn(move || search_range(costs, base, t * chunk, ((t + 1) * chunk).min(count)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("search thread")).collect()
        })
    };
    let mut best: Option<(u64, f64, Vec<usize>)> = None;
    for p in partials.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some((bi, bt, _)) => p.1 < *bt || (p.1 == *bt && p.0 < *bi),
        };
        if better {
            best = Some(p);
        }
    }
    let (_, total, digits) = best.expect("search space is nonempty");
    Ok(OracleResult {
        best_joint: JointAction::new(digits),
        best_mean_latency: total / n as f64,
        evaluated_count: count,
    })
}

/// Vehicles in descending compute demand each take the option minimizing their
/// own latency given the vehicles already placed.
pub fn greedy_heuristic(state: &SlotState, config: &EnvConfig) -> Result<JointAction> {
    let costs = SlotCosts::new(state, config)?;
    let n = state.num_vehicles();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| costs.demand[b].total_cmp(&costs.demand[a]).then(a.cmp(&b)));
    let mut choices = vec![0usize; n];
    let mut loads = vec![0.0; config.num_destinations()];
    for &i in &order {
        let mut best = (0usize, costs.local[i]);
        for a in 1..config.num_actions() {
            let d = a - 1;
            loads[d] += costs.demand[i];
            let lat = costs.latency_of(i, a, &loads);
            loads[d] -= costs.demand[i];
            if lat < best.1 {
                best = (a, lat);
            }
        }
        choices[i] = best.0;
        if best.0 > 0 {
            loads[best.0 - 1] += costs.demand[i];
        }
    }
    Ok(JointAction::new(choices))
}

pub fn mean_latency(joint: &JointAction, state: &SlotState, config: &EnvConfig) -> Result<f64> {
    Ok(slot_latencies(joint, state, config)?.mean_latency())
}

/// What a policy sees at each slot. Learned policies should only read
/// `observations`; baselines may use the full state.
pub struct PolicyContext<'a> {
    pub slot: usize,
    pub observations: &'a [Observation],
    pub state: &'a SlotState,
    pub env: &'a OffloadEnv,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyEvaluation {
    /// Mean per-vehicle latency over all slots and episodes.
    pub mean_latency: f64,
    pub mean_reward: f64,
    pub slots: usize,
}

/// Episode seeds derived from one evaluation seed.
pub fn episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..episodes).map(|_| rng.gen()).collect()
}

/// Runs `episodes` full episodes with a frozen policy.
pub fn evaluate_policy<P>(mut policy: P, episodes: usize, config: &EnvConfig, seed: u64) -> Result<PolicyEvaluation>
where
    P: FnMut(&PolicyContext<'_>) -> Result<JointAction>,
{
    let mut env = OffloadEnv::new(config.clone())?;
    let mut latency_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut slots = 0usize;
    for ep_seed in episode_seeds(seed, episodes) {
        let mut obs = env.reset(ep_seed)?;
        while !env.is_done() {
            let joint = {
                let ctx = PolicyContext {
                    slot: env.slot(),
                    observations: &obs,
                    state: env.state(),
                    env: &env,
                };
                policy(&ctx)?
            };
            let out = env.step(&joint)?;
            latency_sum += out.outcome.mean_latency();
            reward_sum += out.reward;
            slots += 1;
            obs = out.observations;
        }
    }
    let denom = slots.max(1) as f64;
    Ok(PolicyEvaluation {
        mean_latency: latency_sum / denom,
        mean_reward: reward_sum / denom,
        slots,
    })
}

/// Baseline policies usable with [`evaluate_policy`].
pub mod baselines {
    use super::*;

    pub fn always_local(ctx: &PolicyContext<'_>) -> Result<JointAction> {
        Ok(JointAction::all_local(ctx.state.num_vehicles()))
    }

    pub fn greedy(ctx: &PolicyContext<'_>) -> Result<JointAction> {
        greedy_heuristic(ctx.state, ctx.env.config())
    }

    pub fn exact(ctx: &PolicyContext<'_>) -> Result<JointAction> {
        Ok(exact_slot_optimum(ctx.state, ctx.env.config(), DEFAULT_ENUMERATION_CAP)?.best_joint)
    }
}
