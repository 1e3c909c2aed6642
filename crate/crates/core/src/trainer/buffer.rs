use std::collections::VecDeque;

use rand::Rng;

use crate::env::JointAction;
use crate::Matrix;

/// One slot of experience for all agents.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// `I × 4` raw observations, also the mixer's node features.
    pub observations: Matrix,
    /// `I × (4·depth)` agent-net inputs (stacked history, current frame first).
    pub agent_inputs: Matrix,
    pub actions: JointAction,
    /// Raw team reward, before any training scale.
    pub reward: f64,
    pub next_observations: Matrix,
    pub next_agent_inputs: Matrix,
    pub adjacency: Matrix,
    pub next_adjacency: Matrix,
    pub done: bool,
}

impl Transition {
    pub fn num_agents(&self) -> usize {
        self.observations.rows()
    }
}

/// Fixed-capacity FIFO store with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Evicts the oldest item when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
