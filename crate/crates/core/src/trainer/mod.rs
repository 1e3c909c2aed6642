//! Centralized training with decentralized execution: rollouts, replay,
//! TD targets from a frozen target copy, the Bellman loss and RMSProp updates.
//!
//! Training is single-threaded and fully determined by the config seed.
//! Independent random streams drive parameter init, episode seeds,
//! exploration and batch sampling, so switching the mixer leaves the other
//! streams untouched.

mod buffer;
mod envs;
mod metrics;

pub use buffer::{ReplayBuffer, Transition};
pub use envs::{EnvStep, EnvView, MultiAgentEnv, ToyEnv};
pub use metrics::{fmt_float, fmt_opt, write_metrics, MetricRow, Smoother, METRIC_HEADER};

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{argmax, select_action, AgentConfig, AgentNet, EpsilonSchedule};
use crate::env::JointAction;
use crate::error::{Error, Result};
use crate::mixers::{MixBatch, Mixer, MixerConfig, MixerKind};
use crate::numkit::{Checkpoint, Graph, Reduce, RmsProp, Tape};
use crate::{Matrix, ParamStore};

const STREAM_INIT: u64 = 0;
const STREAM_EPISODES: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Train steps between hard target copies.
    pub target_sync_interval: u64,
    pub episodes: usize,
    pub train_steps_per_episode: usize,
    pub epsilon: EpsilonSchedule,
    pub mixer: MixerKind,
    pub seed: u64,
    /// Multiplies rewards inside the TD target only; logged returns stay raw.
    pub reward_scale: f64,
    pub smoothing_window: usize,
    /// Observation history depth fed to the agent net.
    pub obs_stack: usize,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Fills the `wall_ms` column; off keeps metric files byte-reproducible.
    pub log_wall_time: bool,
    pub agent: AgentConfig,
    pub mixer_net: MixerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            learning_rate: 1e-4,
            rms_decay: 0.99,
            rms_epsilon: 1e-8,
            batch_size: 64,
            buffer_capacity: 2000,
            target_sync_interval: 200,
            episodes: 5000,
            train_steps_per_episode: 1,
            epsilon: EpsilonSchedule::default(),
            mixer: MixerKind::Kmarl,
            seed: 0,
            reward_scale: 1000.0,
            smoothing_window: 50,
            obs_stack: 1,
            checkpoint_every: 0,
            log_wall_time: false,
            agent: AgentConfig::default(),
            mixer_net: MixerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(
                "gamma",
                format!("must lie in [0, 1), got {}", self.gamma),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::config(
                "batch_size",
                format!("{} exceeds buffer_capacity {}", self.batch_size, self.buffer_capacity),
            ));
        }
        if self.target_sync_interval == 0 {
            return Err(Error::config("target_sync_interval", "must be positive"));
        }
        if self.obs_stack == 0 {
            return Err(Error::config("obs_stack", "must be at least 1"));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return Err(Error::config("epsilon", "start and end must lie in [0, 1]"));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::config("reward_scale", "must be positive"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> RmsProp {
        RmsProp {
            learning_rate: self.learning_rate,
            decay: self.rms_decay,
            epsilon: self.rms_epsilon,
        }
    }
}

/// Keeps the last `depth` observation frames; the stacked input puts the
/// current frame first. A reset fills the history with the first frame.
#[derive(Clone, Debug)]
pub struct ObsStacker {
    depth: usize,
    frames: VecDeque<Matrix>,
}

impl ObsStacker {
    pub fn new(depth: usize) -> Self {
        Self {
            depth: depth.max(1),
            frames: VecDeque::new(),
        }
    }

    pub fn reset(&mut self, first: &Matrix) -> Matrix {
        self.frames.clear();
        for _ in 0..self.depth {
            self.frames.push_back(first.clone());
        }
        self.stacked()
    }

    pub fn push(&mut self, frame: &Matrix) -> Matrix {
        if self.frames.is_empty() {
            return self.reset(frame);
        }
        self.frames.pop_back();
        self.frames.push_front(frame.clone());
        self.stacked()
    }

    pub fn stacked(&self) -> Matrix {
        if self.depth == 1 {
            return self.frames[0].clone();
        }
        let (rows, d) = self.frames[0].shape();
        Matrix::from_fn(rows, d * self.depth, |r, c| self.frames[c / d].get(r, c % d))
    }
}

/// Sampled transitions laid out for one batched forward pass.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub size: usize,
    pub num_agents: usize,
    /// `(B·I) × input_dim`.
    pub inputs: Matrix,
    /// `(B·I) × A` one-hot of the taken actions.
    pub action_mask: Matrix,
    pub mix: MixBatch<f64>,
    pub next_inputs: Matrix,
    pub next_mix: MixBatch<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

fn stack_rows(ms: impl Iterator<Item = Matrix>, cols: usize) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut rows = 0;
    for m in ms {
        rows += m.rows();
        data.extend(m.into_data());
    }
    Matrix::new(rows, cols, data)
}

impl TrainBatch {
    pub fn new(transitions: &[&Transition], num_actions: usize) -> Result<Self> {
        let first = transitions.first().ok_or(Error::EmptyInput { op: "TrainBatch::new" })?;
        let n = first.num_agents();
        let in_dim = first.agent_inputs.cols();
        let inputs = stack_rows(transitions.iter().map(|t| t.agent_inputs.clone()), in_dim)?;
        let next_inputs = stack_rows(transitions.iter().map(|t| t.next_agent_inputs.clone()), in_dim)?;
        let mut action_mask = Matrix::zeros(transitions.len() * n, num_actions);
        for (b, t) in transitions.iter().enumerate() {
            for (i, &a) in t.actions.choices().iter().enumerate() {
                action_mask.set(b * n + i, a, 1.0);
            }
        }
        let obs: Vec<&Matrix> = transitions.iter().map(|t| &t.observations).collect();
        let adj: Vec<&Matrix> = transitions.iter().map(|t| &t.adjacency).collect();
        let next_obs: Vec<&Matrix> = transitions.iter().map(|t| &t.next_observations).collect();
        let next_adj: Vec<&Matrix> = transitions.iter().map(|t| &t.next_adjacency).collect();
        Ok(Self {
            size: transitions.len(),
            num_agents: n,
            inputs,
            action_mask,
            mix: MixBatch::new(&obs, &adj)?,
            next_inputs,
            next_mix: MixBatch::new(&next_obs, &next_adj)?,
            rewards: transitions.iter().map(|t| t.reward).collect(),
            dones: transitions.iter().map(|t| t.done).collect(),
        })
    }
}

/// Agent net plus mixer; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub agent: AgentNet,
    pub mixer: Mixer,
}

impl Model {
    /// `Q_tot` of the taken actions, `B × 1`.
    pub fn chosen_q_tot<G: Graph<f64>>(&self, g: &mut G, batch: &TrainBatch) -> Result<G::Node> {
        let x = g.input(batch.inputs.clone());
        let q = self.agent.forward(g, &x)?;
        let mask = g.input(batch.action_mask.clone());
        let chosen = g.hadamard(&q, &mask)?;
        let ones = g.input(Matrix::filled(batch.action_mask.cols(), 1, 1.0));
        let chosen = g.matmul(&chosen, &ones)?;
        let chosen = g.reshape(&chosen, batch.size, batch.num_agents)?;
        self.mixer.forward(g, &chosen, &batch.mix)
    }

    /// Mean of `(y − Q_tot)²` over the batch; `targets` enter as constants.
    pub fn loss<G: Graph<f64>>(&self, g: &mut G, batch: &TrainBatch, targets: &[f64]) -> Result<G::Node> {
        let q_tot = self.chosen_q_tot(g, batch)?;
        let y = g.input(Matrix::column_vector(targets));
        let diff = g.sub(&q_tot, &y)?;
        let sq = g.hadamard(&diff, &diff)?;
        let total = g.reduce(&sq, Reduce::SumAll)?;
        Ok(g.scale(&total, 1.0 / batch.size as f64))
    }

    /// `y = scale·r + γ·Q_tot(greedy next utilities)` under `target`; `y = scale·r` when done.
    pub fn td_targets(
        &self,
        target: &ParamStore,
        batch: &TrainBatch,
        gamma: f64,
        reward_scale: f64,
    ) -> Result<Vec<f64>> {
        let q_next = self.agent.q_batch(target, &batch.next_inputs)?;
        let best: Vec<f64> = (0..q_next.rows())
            .map(|r| q_next.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let best = Matrix::new(batch.size, batch.num_agents, best)?;
        let q_tot = self.mixer.q_tot(target, &best, &batch.next_mix)?;
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.dones)
            .zip(q_tot)
            .map(|((&r, &done), q)| {
                if done {
                    reward_scale * r
                } else {
                    reward_scale * r + gamma * q
                }
            })
            .collect())
    }

    /// Per-agent epsilon-greedy actions for `inputs` (`I × input_dim`).
    pub fn act(&self, store: &ParamStore, inputs: &Matrix, epsilon: f64, rng: &mut impl Rng) -> Result<JointAction> {
        let q = self.agent.q_batch(store, inputs)?;
        Ok(JointAction::new(
            (0..q.rows()).map(|r| select_action(q.row(r), epsilon, rng)).collect(),
        ))
    }

    pub fn greedy(&self, store: &ParamStore, inputs: &Matrix) -> Result<JointAction> {
        let q = self.agent.q_batch(store, inputs)?;
        Ok(JointAction::new((0..q.rows()).map(|r| argmax(q.row(r))).collect()))
    }
}

/// Online and target parameters with the optimizer state.
#[derive(Clone, Debug)]
pub struct Learner {
    pub config: TrainConfig,
    pub model: Model,
    pub online: ParamStore,
    pub target: ParamStore,
    pub steps: u64,
    pub num_agents: usize,
    pub feature_dim: usize,
    pub num_actions: usize,
    optimizer: RmsProp,
    sample_rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(config: TrainConfig, num_agents: usize, feature_dim: usize, num_actions: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, STREAM_INIT);
        let mut online = ParamStore::new();
        let input_dim = feature_dim * config.obs_stack;
        let agent = AgentNet::new(&mut online, input_dim, num_actions, &config.agent, &mut rng);
        let mixer = Mixer::new(
            config.mixer,
            &mut online,
            num_agents,
            feature_dim,
            &config.mixer_net,
            &mut rng,
        );
        Ok(Self {
            optimizer: config.optimizer(),
            sample_rng: stream_rng(config.seed, STREAM_SAMPLE),
            target: online.clone(),
            online,
            model: Model { agent, mixer },
            steps: 0,
            num_agents,
            feature_dim,
            num_actions,
            config,
        })
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_values_from(&self.online)
    }

    /// Returns `None` without touching parameters while the buffer holds
    /// fewer than `batch_size` transitions.
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<Option<f64>> {
        if buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let sampled = buffer.sample(self.config.batch_size, &mut self.sample_rng);
        let batch = TrainBatch::new(&sampled, self.num_actions)?;
        let loss = self.update(&batch)?;
        Ok(Some(loss))
    }

    /// One gradient step on a given batch.
    pub fn update(&mut self, batch: &TrainBatch) -> Result<f64> {
        let targets = self
            .model
            .td_targets(&self.target, batch, self.config.gamma, self.config.reward_scale)?;
        let (loss, grads) = {
            let mut tape = Tape::new(&self.online);
            let loss = self.model.loss(&mut tape, batch, &targets)?;
            (tape.value(&loss).item()?, tape.backward(loss)?)
        };
        self.online.zero_grads();
        self.online.accumulate(&grads)?;
        self.optimizer.step(&mut self.online);
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.target_sync_interval) {
            self.sync_target()?;
        }
        Ok(loss)
    }

    pub fn checkpoint(&self, episode: usize) -> Result<Checkpoint> {
        let config = toml::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta = vec![
            ("mixer".to_string(), self.config.mixer.to_string()),
            ("num_agents".to_string(), self.num_agents.to_string()),
            ("feature_dim".to_string(), self.feature_dim.to_string()),
            ("num_actions".to_string(), self.num_actions.to_string()),
            ("train_steps".to_string(), self.steps.to_string()),
            ("episode".to_string(), episode.to_string()),
            ("train_config".to_string(), config),
        ];
        Ok(Checkpoint::from_store(meta, &self.online))
    }

    /// Rebuilds a learner from a checkpoint. `num_agents` overrides the
    /// trained count, which only agent-count-independent mixers accept.
    pub fn from_checkpoint(ck: &Checkpoint, num_agents: Option<usize>) -> Result<Self> {
        let config: TrainConfig =
            toml::from_str(ck.require_meta("train_config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let parse = |key: &str| -> Result<usize> {
            ck.require_meta(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("header field `{key}` is not an integer")))
        };
        let trained_agents = parse("num_agents")?;
        let num_agents = num_agents.unwrap_or(trained_agents);
        let mut learner = Self::new(config, num_agents, parse("feature_dim")?, parse("num_actions")?)?;
        ck.load_into(&mut learner.online)?;
        learner.sync_target()?;
        learner.steps = parse("train_steps")? as u64;
        Ok(learner)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub episode_return: f64,
    pub mean_latency: Option<f64>,
    pub slots: usize,
}

/// Runs one episode with epsilon-greedy agents, appending every transition.
pub fn collect_episode<E: MultiAgentEnv>(
    env: &mut E,
    learner: &Learner,
    epsilon: f64,
    episode_seed: u64,
    rng: &mut impl Rng,
    buffer: &mut ReplayBuffer,
) -> Result<EpisodeStats> {
    let mut stacker = ObsStacker::new(learner.config.obs_stack);
    let mut view = env.reset(episode_seed)?;
    let mut inputs = stacker.reset(&view.features);
    let mut stats = EpisodeStats {
        episode_return: 0.0,
        mean_latency: None,
        slots: 0,
    };
    let mut latency_sum = 0.0;
    let mut latency_slots = 0usize;
    loop {
        let actions = learner.model.act(&learner.online, &inputs, epsilon, rng)?;
        let step = env.step(&actions)?;
        let next_inputs = stacker.push(&step.view.features);
        stats.episode_return += step.reward;
        stats.slots += 1;
        if let Some(l) = step.mean_latency {
            latency_sum += l;
            latency_slots += 1;
        }
        buffer.push(Transition {
            observations: view.features,
            agent_inputs: inputs,
            actions,
            reward: step.reward,
            next_observations: step.view.features.clone(),
            next_agent_inputs: next_inputs.clone(),
            adjacency: view.adjacency,
            next_adjacency: step.view.adjacency.clone(),
            done: step.done,
        });
        view = step.view;
        inputs = next_inputs;
        if step.done {
            break;
        }
    }
    if latency_slots > 0 {
        stats.mean_latency = Some(latency_sum / latency_slots as f64);
    }
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub metrics: Vec<MetricRow>,
}

/// Full training run. `on_checkpoint(learner, episodes_done)` fires every
/// `checkpoint_every` episodes and once at the end.
pub fn train<E: MultiAgentEnv>(
    env: &mut E,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(&Learner, usize) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut learner = Learner::new(config.clone(), env.num_agents(), env.feature_dim(), env.num_actions())?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut episode_rng = stream_rng(config.seed, STREAM_EPISODES);
    let mut explore_rng = stream_rng(config.seed, STREAM_EXPLORE);
    let mut smoother = Smoother::new(config.smoothing_window);
    let mut metrics = Vec::with_capacity(config.episodes);
    let start = Instant::now();
    for episode in 0..config.episodes {
        let epsilon = config.epsilon.value(episode, config.episodes);
        let seed: u64 = episode_rng.gen();
        let stats = collect_episode(env, &learner, epsilon, seed, &mut explore_rng, &mut buffer)?;
        let mut loss = None;
        for _ in 0..config.train_steps_per_episode {
            if let Some(l) = learner.train_step(&buffer)? {
                loss = Some(l);
            }
        }
        metrics.push(MetricRow {
            episode,
            episode_return: stats.episode_return,
            smoothed_return: smoother.push(stats.episode_return),
            loss,
            epsilon,
            mean_latency: stats.mean_latency,
            wall_ms: if config.log_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        let done = episode + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.episodes {
            on_checkpoint(&learner, done)?;
        }
    }
    on_checkpoint(&learner, config.episodes)?;
    Ok(TrainOutcome { learner, metrics })
}
