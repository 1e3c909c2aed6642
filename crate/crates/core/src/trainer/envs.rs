use crate::env::{adjacency, observation_matrix, JointAction, OffloadEnv, OBS_DIM};
use crate::error::{Error, Result};
use crate::Matrix;

/// What agents and the mixer can see after a reset or step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvView {
    /// `I × feature_dim`.
    pub features: Matrix,
    /// `I × I`, symmetric, zero diagonal.
    pub adjacency: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub view: EnvView,
    pub reward: f64,
    pub done: bool,
    /// Mean per-vehicle latency of the slot, when the world has one.
    pub mean_latency: Option<f64>,
}

/// A cooperative environment with a shared team reward.
pub trait MultiAgentEnv {
    fn num_agents(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<EnvView>;
    fn step(&mut self, actions: &JointAction) -> Result<EnvStep>;
}

impl MultiAgentEnv for OffloadEnv {
    fn num_agents(&self) -> usize {
        self.config().num_vehicles
    }

    fn num_actions(&self) -> usize {
        self.config().num_actions()
    }

    fn feature_dim(&self) -> usize {
        OBS_DIM
    }

    fn reset(&mut self, seed: u64) -> Result<EnvView> {
        let obs = OffloadEnv::reset(self, seed)?;
        Ok(EnvView {
            features: observation_matrix(&obs),
            adjacency: self.adjacency(),
        })
    }

    fn step(&mut self, actions: &JointAction) -> Result<EnvStep> {
        let out = OffloadEnv::step(self, actions)?;
        Ok(EnvStep {
            view: EnvView {
                features: observation_matrix(&out.observations),
                adjacency: adjacency(&self.state().vehicles, self.config().adjacency_range),
            },
            reward: out.reward,
            done: out.done,
            mean_latency: Some(out.outcome.mean_latency()),
        })
    }
}

/// One agent, one slot, two actions with fixed rewards. The Bellman fixed
/// point is `Q(a) = rewards[a]`.
#[derive(Clone, Debug)]
pub struct ToyEnv {
    pub rewards: [f64; 2],
    pub observation: [f64; OBS_DIM],
    ready: bool,
}

impl Default for ToyEnv {
    fn default() -> Self {
        Self {
            rewards: [-1.0, -0.2],
            observation: [0.5; OBS_DIM],
            ready: false,
        }
    }
}

impl ToyEnv {
    fn view(&self) -> EnvView {
        EnvView {
            features: Matrix::row_vector(&self.observation),
            adjacency: Matrix::zeros(1, 1),
        }
    }
}

impl MultiAgentEnv for ToyEnv {
    fn num_agents(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        OBS_DIM
    }

    fn reset(&mut self, _seed: u64) -> Result<EnvView> {
        self.ready = true;
        Ok(self.view())
    }

    fn step(&mut self, actions: &JointAction) -> Result<EnvStep> {
        if !self.ready {
            return Err(Error::NotReset);
        }
        actions.check(1, 0)?;
        self.ready = false;
        Ok(EnvStep {
            view: self.view(),
            reward: self.rewards[actions.choices()[0]],
            done: true,
            mean_latency: None,
        })
    }
}
