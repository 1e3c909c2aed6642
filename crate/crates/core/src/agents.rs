//! Per-agent utility network and epsilon-greedy action selection.
//!
//! One parameter set is shared by every agent and applied row-wise to the
//! stacked agent inputs, so the same network serves any vehicle count.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, Eager, Graph, Linear, Matrix, ParamStore, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

/// MLP from an agent's input to one value per action.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNet {
    layers: Vec<Linear>,
    activation: Activation,
    input_dim: usize,
    num_actions: usize,
}

impl AgentNet {
    /// Registers parameters named `agent.l{k}.weight` / `agent.l{k}.bias` in `store`.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        input_dim: usize,
        num_actions: usize,
        config: &AgentConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(num_actions);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("agent.l{k}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activation: config.activation,
            input_dim,
            num_actions,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `x`: one row per agent (any number of rows) → one row of action values per agent.
    pub fn forward<S: Scalar, G: Graph<S>>(&self, g: &mut G, x: &G::Node) -> Result<G::Node> {
        let cols = g.value(x).cols();
        if cols != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "AgentNet::forward",
                left: (g.value(x).rows(), cols),
                right: (cols, self.input_dim),
            });
        }
        let mut h = self.layers[0].forward(g, x)?;
        for layer in &self.layers[1..] {
            h = g.activation(&h, self.activation);
            h = layer.forward(g, &h)?;
        }
        Ok(h)
    }

    pub fn q_batch<S: Scalar>(&self, store: &ParamStore<S>, inputs: &Matrix<S>) -> Result<Matrix<S>> {
        let mut g = Eager::new(store);
        let x = g.input(inputs.clone());
        Ok(self.forward(&mut g, &x)?.into_owned())
    }

    pub fn q_values<S: Scalar>(&self, store: &ParamStore<S>, obs: &[S]) -> Result<Vec<S>> {
        Ok(self.q_batch(store, &Matrix::row_vector(obs))?.into_data())
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<S: Scalar>(q: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Uniform random action with probability `epsilon`, greedy otherwise.
pub fn select_action<S: Scalar>(q: &[S], epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize, total_episodes: usize) -> f64 {
        let horizon = self.decay_fraction * total_episodes as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let t = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * t
    }
}
