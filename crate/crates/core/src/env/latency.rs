//! Local, RSU and MBS latency models and the shared team reward.

use num_traits::Float;

use crate::error::{Error, Result};

use super::{EnvConfig, JointAction, Placement, SlotState, TaskSpec};

/// `φ^co / F_i`.
pub fn local_latency<F: Float>(compute_demand: F, vehicle_cpu: F) -> F {
    compute_demand / vehicle_cpu
}

/// `B · log₂(1 + p_t·g / (σ²·s²))`; the same form serves RSU and MBS links.
pub fn link_rate<F: Float>(bandwidth: F, transmit_power: F, gain: F, noise_power: F, distance: F) -> Result<F> {
    if !(distance > F::zero()) {
        return Err(Error::NonPositiveDistance(distance.to_f64().unwrap_or(f64::NAN)));
    }
    let snr = transmit_power * gain / (noise_power * distance * distance);
    Ok(bandwidth * snr.ln_1p() / F::from(std::f64::consts::LN_2).unwrap())
}

/// `φ^co / f + φ^da / tr` for an offloaded task.
pub fn remote_latency<F: Float>(compute_demand: F, allocated: F, data_size: F, rate: F) -> F {
    compute_demand / allocated + data_size / rate
}

/// Capacity share of each offloaded vehicle and the load `ζ_d` per destination.
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceShares {
    /// `f = (φ^co / ζ_d)·F_d` for offloaded vehicles, `None` for local ones.
    pub allocated: Vec<Option<f64>>,
    /// `ζ_d = Σ φ^co` over vehicles choosing destination `d` (RSUs, then MBS).
    pub loads: Vec<f64>,
}

pub fn resource_shares(joint: &JointAction, tasks: &[TaskSpec], config: &EnvConfig) -> Result<ResourceShares> {
    joint.check(tasks.len(), config.num_rsus)?;
    let mut loads = vec![0.0; config.num_destinations()];
    for (a, t) in joint.choices().iter().zip(tasks) {
        if let Some(d) = destination_of(*a) {
            loads[d] += t.compute_demand;
        }
    }
    let allocated = joint
        .choices()
        .iter()
        .zip(tasks)
        .map(|(a, t)| destination_of(*a).map(|d| share(t.compute_demand, loads[d], config.destination_cpu(d))))
        .collect();
    Ok(ResourceShares { allocated, loads })
}

pub(crate) fn share(compute_demand: f64, load: f64, cpu: f64) -> f64 {
    compute_demand / load * cpu
}

/// Action index → destination index (0..R RSUs, R the MBS); `None` for local.
pub(crate) fn destination_of(action: usize) -> Option<usize> {
    action.checked_sub(1)
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Everything one slot produces for the chosen joint action.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotOutcome {
    pub placements: Vec<Placement>,
    pub latencies: Vec<f64>,
    /// What each vehicle would have paid computing locally.
    pub local_latencies: Vec<f64>,
    /// Compute part of each latency (equal to the total for local vehicles).
    pub compute_latencies: Vec<f64>,
    pub transmit_latencies: Vec<f64>,
    pub penalties: Vec<f64>,
    pub loads: Vec<f64>,
    pub team_reward: f64,
}

impl SlotOutcome {
    pub fn mean_latency(&self) -> f64 {
        self.latencies.iter().sum::<f64>() / self.latencies.len() as f64
    }
}

/// Per-vehicle latencies for `joint`, with the penalty and team reward.
pub fn slot_latencies(joint: &JointAction, state: &SlotState, config: &EnvConfig) -> Result<SlotOutcome> {
    let tasks: Vec<TaskSpec> = state.vehicles.iter().map(|v| v.task).collect();
    let shares = resource_shares(joint, &tasks, config)?;
    let n = tasks.len();
    let mut out = SlotOutcome {
        placements: Vec::with_capacity(n),
        latencies: Vec::with_capacity(n),
        local_latencies: Vec::with_capacity(n),
        compute_latencies: Vec::with_capacity(n),
        transmit_latencies: Vec::with_capacity(n),
        penalties: Vec::with_capacity(n),
        loads: shares.loads.clone(),
        team_reward: 0.0,
    };
    for (i, (&a, v)) in joint.choices().iter().zip(&state.vehicles).enumerate() {
        let local = local_latency(v.task.compute_demand, config.vehicle_cpu);
        out.local_latencies.push(local);
        out.placements.push(Placement::from_action(a, config.num_rsus));
        match destination_of(a) {
            None => {
                out.latencies.push(local);
                out.compute_latencies.push(local);
                out.transmit_latencies.push(0.0);
            }
            Some(d) => {
                let rate = destination_rate(state, config, i, d)?;
                let f = shares.allocated[i].expect("offloaded vehicles have a share");
                let compute = v.task.compute_demand / f;
                let transmit = v.task.data_size / rate;
                out.latencies
                    .push(remote_latency(v.task.compute_demand, f, v.task.data_size, rate));
                out.compute_latencies.push(compute);
                out.transmit_latencies.push(transmit);
            }
        }
    }
    out.penalties = penalties(&out.latencies, &out.local_latencies, config.penalty_coefficient);
    out.team_reward = team_reward(&out, config);
    Ok(out)
}

pub(crate) fn destination_rate(state: &SlotState, config: &EnvConfig, vehicle: usize, d: usize) -> Result<f64> {
    let v = &state.vehicles[vehicle];
    link_rate(
        config.destination_bandwidth(d),
        config.transmit_power,
        state.gains[vehicle][d],
        config.noise_power,
        distance(v.position, config.destination_position(d)),
    )
}

/// `η = c · max(0, La − La^loc)`.
pub fn penalties(latencies: &[f64], local_latencies: &[f64], coefficient: f64) -> Vec<f64> {
    latencies
        .iter()
        .zip(local_latencies)
        .map(|(&la, &loc)| coefficient * (la - loc).max(0.0))
        .collect()
}

/// `−(1/I)·Σ(η + La)`, recomputed from the outcome's latencies.
pub fn team_reward(outcome: &SlotOutcome, config: &EnvConfig) -> f64 {
    let eta = penalties(&outcome.latencies, &outcome.local_latencies, config.penalty_coefficient);
    let total: f64 = eta.iter().zip(&outcome.latencies).map(|(e, la)| e + la).sum();
    -total / outcome.latencies.len() as f64
}

/// Precomputed per-slot quantities for fast repeated evaluation of joint
/// actions (oracle search). Uses the same arithmetic as [`slot_latencies`].
#[derive(Clone, Debug)]
pub struct SlotCosts {
    pub(crate) local: Vec<f64>,
    pub(crate) demand: Vec<f64>,
    /// `[vehicle][destination]` transmission time.
    pub(crate) transmit: Vec<Vec<f64>>,
    pub(crate) cpu: Vec<f64>,
}

impl SlotCosts {
    pub fn new(state: &SlotState, config: &EnvConfig) -> Result<Self> {
        let mut transmit = Vec::with_capacity(state.vehicles.len());
        for (i, v) in state.vehicles.iter().enumerate() {
            let row = (0..config.num_destinations())
                .map(|d| destination_rate(state, config, i, d).map(|r| v.task.data_size / r))
                .collect::<Result<Vec<_>>>()?;
            transmit.push(row);
        }
        Ok(Self {
            local: state
                .vehicles
                .iter()
                .map(|v| local_latency(v.task.compute_demand, config.vehicle_cpu))
                .collect(),
            demand: state.vehicles.iter().map(|v| v.task.compute_demand).collect(),
            transmit,
            cpu: (0..config.num_destinations())
                .map(|d| config.destination_cpu(d))
                .collect(),
        })
    }

    pub fn num_vehicles(&self) -> usize {
        self.local.len()
    }

    /// Latency of vehicle `i` under `actions` given destination loads.
    pub(crate) fn latency_of(&self, i: usize, action: usize, loads: &[f64]) -> f64 {
        match destination_of(action) {
            None => self.local[i],
            Some(d) => {
                let f = share(self.demand[i], loads[d], self.cpu[d]);
                self.demand[i] / f + self.transmit[i][d]
            }
        }
    }

    /// Sum of latencies over all vehicles; `loads` is scratch space.
    pub fn total_latency(&self, actions: &[usize], loads: &mut [f64]) -> f64 {
        loads.iter_mut().for_each(|l| *l = 0.0);
        for (i, &a) in actions.iter().enumerate() {
            if let Some(d) = destination_of(a) {
                loads[d] += self.demand[i];
            }
        }
        actions
            .iter()
            .enumerate()
            .map(|(i, &a)| self.latency_of(i, a, loads))
            .sum()
    }
}
