//! The vehicular edge world: mobility, per-slot tasks, latency models,
//! observations, team reward and the vehicle adjacency graph.

mod config;
mod latency;

pub use config::{ChannelGain, EnvConfig, DEFAULT_ROAD_LENGTH};
pub use latency::{
    link_rate, local_latency, penalties, remote_latency, resource_shares, slot_latencies, team_reward, ResourceShares,
    SlotCosts, SlotOutcome,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Observation width: x, y, data size, compute demand.
pub const OBS_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskSpec {
    /// Mbit.
    pub data_size: f64,
    /// Megacycles; `ρ · data_size`.
    pub compute_demand: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    /// Meters; x along the road, y the lane offset.
    pub position: [f64; 2],
    /// Meters per slot.
    pub speed: f64,
    pub task: TaskSpec,
}

/// Everything the latency of a slot depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotState {
    pub vehicles: Vec<VehicleState>,
    /// `[vehicle][destination]` channel power gain, destinations are RSUs then MBS.
    pub gains: Vec<Vec<f64>>,
}

impl SlotState {
    pub fn num_vehicles(&self) -> usize {
        self.vehicles.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    Local,
    Rsu(usize),
    Mbs,
}

impl Placement {
    pub fn from_action(action: usize, num_rsus: usize) -> Self {
        match action {
            0 => Placement::Local,
            a if a <= num_rsus => Placement::Rsu(a - 1),
            _ => Placement::Mbs,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Placement::Local => "local".into(),
            Placement::Rsu(r) => format!("rsu{r}"),
            Placement::Mbs => "mbs".into(),
        }
    }
}

/// One offloading choice per vehicle: `0` local, `1..=R` RSU, `R+1` MBS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointAction(Vec<usize>);

impl JointAction {
    pub fn new(choices: Vec<usize>) -> Self {
        Self(choices)
    }

    pub fn all_local(num_vehicles: usize) -> Self {
        Self(vec![0; num_vehicles])
    }

    pub fn choices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One choice per vehicle, each within `0..=R+1`.
    pub fn check(&self, num_vehicles: usize, num_rsus: usize) -> Result<()> {
        if self.0.len() != num_vehicles {
            return Err(Error::InvalidAction(format!(
                "expected {num_vehicles} choices, got {}",
                self.0.len()
            )));
        }
        if let Some((i, a)) = self.0.iter().enumerate().find(|(_, &a)| a > num_rsus + 1) {
            return Err(Error::InvalidAction(format!(
                "vehicle {i} chose {a}, valid range is 0..={}",
                num_rsus + 1
            )));
        }
        Ok(())
    }
}

impl From<Vec<usize>> for JointAction {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Local observation normalized to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub position: [f64; 2],
    pub data_size: f64,
    pub compute_demand: f64,
}

impl Observation {
    pub fn of(vehicle: &VehicleState, config: &EnvConfig) -> Self {
        let max_lane = config.max_lane_offset();
        Self {
            position: [
                vehicle.position[0] / config.road_length,
                if max_lane > 0.0 {
                    vehicle.position[1] / max_lane
                } else {
                    0.0
                },
            ],
            data_size: vehicle.task.data_size / config.max_task_size(),
            compute_demand: vehicle.task.compute_demand / config.max_compute_demand(),
        }
    }

    pub fn to_array(self) -> [f64; OBS_DIM] {
        [self.position[0], self.position[1], self.data_size, self.compute_demand]
    }
}

/// Stacks observations into an `I × 4` matrix.
pub fn observation_matrix(obs: &[Observation]) -> Matrix<f64> {
    Matrix::from_fn(obs.len(), OBS_DIM, |r, c| obs[r].to_array()[c])
}

/// `A_ij = 1` iff `i ≠ j` and the vehicles are within `range` meters.
pub fn adjacency(vehicles: &[VehicleState], range: f64) -> Matrix<f64> {
    Matrix::from_fn(vehicles.len(), vehicles.len(), |i, j| {
        if i != j && latency::distance(vehicles[i].position, vehicles[j].position) <= range {
            1.0
        } else {
            0.0
        }
    })
}

/// What one call to [`OffloadEnv::step`] returns.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub observations: Vec<Observation>,
    pub reward: f64,
    pub outcome: SlotOutcome,
    pub done: bool,
}

/// Episode lifecycle over the world. Single-threaded; independent
/// instances share nothing.
#[derive(Clone, Debug)]
pub struct OffloadEnv {
    config: EnvConfig,
    rng: ChaCha8Rng,
    start_x: Vec<f64>,
    state: SlotState,
    slot: usize,
    ready: bool,
}

impl OffloadEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            start_x: Vec::new(),
            state: SlotState {
                vehicles: Vec::new(),
                gains: Vec::new(),
            },
            slot: 0,
            ready: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &SlotState {
        &self.state
    }

    /// Slots completed in the current episode.
    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.ready && self.slot >= self.config.horizon
    }

    /// Places vehicles uniformly on the road, draws speeds and first tasks.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<Observation>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &self.config;
        let mut vehicles = Vec::with_capacity(c.num_vehicles);
        self.start_x.clear();
        for _ in 0..c.num_vehicles {
            let x = self.rng.gen_range(0.0..c.road_length);
            let lane = c.lane_offsets[self.rng.gen_range(0..c.lane_offsets.len())];
            let [lo, hi] = c.speed_range;
            let speed = if lo < hi { self.rng.gen_range(lo..=hi) } else { lo };
            self.start_x.push(x);
            vehicles.push(VehicleState {
                position: [x, lane],
                speed,
                task: TaskSpec {
                    data_size: 0.0,
                    compute_demand: 0.0,
                },
            });
        }
        self.state.vehicles = vehicles;
        self.slot = 0;
        self.ready = true;
        self.draw_slot();
        Ok(self.observations())
    }

    fn draw_slot(&mut self) {
        let c = &self.config;
        for v in &mut self.state.vehicles {
            let size = c.task_sizes[self.rng.gen_range(0..c.task_sizes.len())];
            let [lo, hi] = c.rho_range;
            let rho = if lo < hi { self.rng.gen_range(lo..=hi) } else { lo };
            v.task = TaskSpec {
                data_size: size,
                compute_demand: rho * size,
            };
        }
        let dests = c.num_destinations();
        let gain_model = c.channel_gain;
        let rng = &mut self.rng;
        self.state.gains = (0..c.num_vehicles)
            .map(|_| {
                (0..dests)
                    .map(|_| match gain_model {
                        ChannelGain::Rayleigh => {
                            let g: f64 = Exp1.sample(rng);
                            g.max(f64::MIN_POSITIVE)
                        }
                        ChannelGain::Constant => 1.0,
                    })
                    .collect()
            })
            .collect();
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.state
            .vehicles
            .iter()
            .map(|v| Observation::of(v, &self.config))
            .collect()
    }

    pub fn adjacency(&self) -> Matrix<f64> {
        adjacency(&self.state.vehicles, self.config.adjacency_range)
    }

    /// Evaluates the slot, moves vehicles, draws the next tasks.
    pub fn step(&mut self, joint: &JointAction) -> Result<StepOutput> {
        if !self.ready {
            return Err(Error::NotReset);
        }
        if self.is_done() {
            return Err(Error::EpisodeFinished(self.slot));
        }
        let outcome = slot_latencies(joint, &self.state, &self.config)?;
        self.slot += 1;
        let t = self.slot as f64;
        let length = self.config.road_length;
        for (v, &x0) in self.state.vehicles.iter_mut().zip(&self.start_x) {
            v.position[0] = (x0 + t * v.speed).rem_euclid(length);
        }
        self.draw_slot();
        Ok(StepOutput {
            observations: self.observations(),
            reward: outcome.team_reward,
            outcome,
            done: self.is_done(),
        })
    }
}
