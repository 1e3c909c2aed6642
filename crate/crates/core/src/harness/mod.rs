//! Experiment driver: reward-convergence runs across mixers and seeds,
//! latency-vs-vehicle-count sweeps, the oracle gap, config description and
//! chart rendering. Every output is a CSV plus an SVG rendered from it.

mod chart;
mod describe;
mod table;

pub use chart::render_line_chart;
pub use describe::describe_config;
pub use table::Table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{observation_matrix, EnvConfig, OffloadEnv, OBS_DIM};
use crate::error::{Error, Result};
use crate::mixers::{monotonicity_check, MixerKind};
use crate::oracle::{
    baselines, episode_seeds, evaluate_policy, exact_slot_optimum, greedy_heuristic, mean_latency, PolicyEvaluation,
    DEFAULT_ENUMERATION_CAP,
};
use crate::trainer::{fmt_float, stream_rng, train, write_metrics, Learner, MetricRow, ObsStacker, TrainConfig};

use table::write_file;

const STREAM_MONOTONICITY: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub seeds: Vec<u64>,
    pub mixers: Vec<MixerKind>,
    /// Vehicle counts for the latency sweep.
    pub vehicle_counts: Vec<usize>,
    /// Held-out episodes per policy evaluation.
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Retrain every mixer at every sweep count, besides reusing the base KMARL checkpoint.
    pub retrain_per_count: bool,
    /// Random inputs per monotonicity check at each checkpoint.
    pub monotonicity_samples: usize,
    pub enumeration_cap: u64,
    pub out_dir: Option<PathBuf>,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentSpec {
    /// Desk scale: 8 vehicles, 2 RSUs, 50 slots, 5000 episodes, 3 seeds.
    pub fn desk() -> Self {
        let mut env = EnvConfig::with_layout(8, 2);
        env.horizon = 50;
        Self {
            name: "desk".into(),
            seeds: vec![1, 2, 3],
            mixers: MixerKind::ALL.to_vec(),
            vehicle_counts: vec![4, 8, 12],
            eval_episodes: 20,
            eval_seed: 1_000_003,
            retrain_per_count: true,
            monotonicity_samples: 1000,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            out_dir: None,
            env,
            train: TrainConfig {
                checkpoint_every: 1000,
                ..TrainConfig::default()
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("spec", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.mixers.is_empty() {
            return Err(Error::config("mixers", "at least one mixer is required"));
        }
        if self.vehicle_counts.contains(&0) {
            return Err(Error::config("vehicle_counts", "counts must be positive"));
        }
        self.env.validate()?;
        self.train.validate()
    }

    pub fn env_for(&self, num_vehicles: usize) -> EnvConfig {
        if num_vehicles == self.env.num_vehicles {
            self.env.clone()
        } else {
            self.env.clone().relayout(num_vehicles, self.env.num_rsus)
        }
    }
}

/// One trained (vehicle count, mixer, seed) cell.
#[derive(Clone, Debug)]
pub struct TrainedCell {
    pub num_vehicles: usize,
    pub mixer: MixerKind,
    pub seed: u64,
    pub metrics: Vec<MetricRow>,
    pub learner: Learner,
    /// Most negative mixing partial at each checkpoint; empty for VDN.
    pub monotonicity: Vec<(usize, f64)>,
}

impl TrainedCell {
    pub fn final_smoothed_return(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.smoothed_return)
    }

    pub fn label(&self) -> String {
        cell_label(self.num_vehicles, self.mixer, self.seed)
    }
}

fn cell_label(n: usize, mixer: MixerKind, seed: u64) -> String {
    format!("n{n}/{mixer}/seed{seed}")
}

/// Greedy per-agent policy from `learner`, evaluated on held-out episodes.
pub fn evaluate_learner(learner: &Learner, env: &EnvConfig, episodes: usize, seed: u64) -> Result<PolicyEvaluation> {
    let mut stacker = ObsStacker::new(learner.config.obs_stack);
    evaluate_policy(
        |ctx| {
            let obs = observation_matrix(ctx.observations);
            let inputs = if ctx.slot == 0 {
                stacker.reset(&obs)
            } else {
                stacker.push(&obs)
            };
            learner.model.greedy(&learner.online, &inputs)
        },
        episodes,
        env,
        seed,
    )
}

/// Whether exhaustive search over `(R+2)^I` joint actions fits under `cap`.
pub fn oracle_feasible(env: &EnvConfig, cap: u64) -> bool {
    (env.num_actions() as f64).powi(env.num_vehicles as i32) <= cap as f64
}

#[derive(Debug, Default)]
pub struct ConvergenceReport {
    /// `(mixer, seed, final smoothed return)`.
    pub finals: Vec<(MixerKind, u64, f64)>,
    pub failures: Vec<Error>,
}

impl ConvergenceReport {
    pub fn final_of(&self, mixer: MixerKind, seed: u64) -> Option<f64> {
        self.finals
            .iter()
            .find(|(m, s, _)| *m == mixer && *s == seed)
            .map(|(_, _, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub num_vehicles: usize,
    pub method: String,
    /// `None` for seed-independent baselines.
    pub seed: Option<u64>,
    pub mean_latency: f64,
}

#[derive(Debug, Default)]
pub struct ScalabilityReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<Error>,
}

impl ScalabilityReport {
    pub fn latency(&self, n: usize, method: &str, seed: Option<u64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.num_vehicles == n && r.method == method && r.seed == seed)
            .map(|r| r.mean_latency)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleGap {
    pub policy: f64,
    pub greedy: f64,
    pub local: f64,
    pub oracle: f64,
}

impl OracleGap {
    pub fn policy_gap(&self) -> f64 {
        (self.policy - self.oracle) / self.oracle
    }

    pub fn greedy_gap(&self) -> f64 {
        (self.greedy - self.oracle) / self.oracle
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["method", "mean_latency", "gap"]);
        for (m, v) in [
            ("policy", self.policy),
            ("greedy", self.greedy),
            ("local", self.local),
            ("oracle", self.oracle),
        ] {
            t.push(vec![m.into(), fmt_float(v), fmt_float((v - self.oracle) / self.oracle)]);
        }
        t
    }
}

/// Mean latency of the learned policy, the greedy heuristic, always-local
/// and the exact per-slot optimum on the same held-out episodes.
pub fn oracle_gap(learner: &Learner, env: &EnvConfig, episodes: usize, seed: u64, cap: u64) -> Result<OracleGap> {
    if !oracle_feasible(env, cap) {
        let count = (env.num_actions() as f64).powi(env.num_vehicles as i32);
        return Err(Error::EnumerationCap { count, cap });
    }
    Ok(OracleGap {
        policy: evaluate_learner(learner, env, episodes, seed)?.mean_latency,
        greedy: evaluate_policy(baselines::greedy, episodes, env, seed)?.mean_latency,
        local: evaluate_policy(baselines::always_local, episodes, env, seed)?.mean_latency,
        oracle: evaluate_policy(baselines::exact, episodes, env, seed)?.mean_latency,
    })
}

/// One random slot per instance seed: exact optimum, greedy latency and
/// their relative gap.
pub fn oracle_instances(env: &EnvConfig, instances: usize, seed: u64, cap: u64) -> Result<Table> {
    let mut world = OffloadEnv::new(env.clone())?;
    let mut t = Table::new(["instance_seed", "exact_latency", "greedy_latency", "gap"]);
    for s in episode_seeds(seed, instances) {
        world.reset(s)?;
        let state = world.state();
        let exact = exact_slot_optimum(state, env, cap)?.best_mean_latency;
        let greedy = mean_latency(&greedy_heuristic(state, env)?, state, env)?;
        t.push(vec![
            s.to_string(),
            fmt_float(exact),
            fmt_float(greedy),
            fmt_float(greedy / exact - 1.0),
        ]);
    }
    Ok(t)
}

/// Trains cells on demand and caches them, so convergence, sweep and gap
/// runs over one spec share training.
#[derive(Debug)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    cells: BTreeMap<(usize, MixerKind, u64), TrainedCell>,
}

impl Experiment {
    pub fn new(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        if let Some(dir) = &spec.out_dir {
            write_file(dir.join("spec.toml"), spec.to_toml()?.as_bytes())?;
        }
        Ok(Self {
            spec,
            cells: BTreeMap::new(),
        })
    }

    fn out(&self, rel: impl AsRef<Path>) -> Option<PathBuf> {
        self.spec.out_dir.as_ref().map(|d| d.join(rel))
    }

    pub fn base_count(&self) -> usize {
        self.spec.env.num_vehicles
    }

    pub fn cell(&self, n: usize, mixer: MixerKind, seed: u64) -> Option<&TrainedCell> {
        self.cells.get(&(n, mixer, seed))
    }

    /// Trains `(n, mixer, seed)` unless cached. Writes `metrics.csv` and
    /// checkpoints under `cells/n{n}/{mixer}/seed{seed}/` when an output
    /// directory is set.
    pub fn train_cell(&mut self, n: usize, mixer: MixerKind, seed: u64) -> Result<&TrainedCell> {
        let key = (n, mixer, seed);
        if !self.cells.contains_key(&key) {
            let cell = self.run_cell(n, mixer, seed).map_err(|e| Error::Cell {
                cell: cell_label(n, mixer, seed),
                reason: e.to_string(),
            })?;
            self.cells.insert(key, cell);
        }
        Ok(&self.cells[&key])
    }

    fn run_cell(&self, n: usize, mixer: MixerKind, seed: u64) -> Result<TrainedCell> {
        let env_config = self.spec.env_for(n);
        let config = TrainConfig {
            mixer,
            seed,
            ..self.spec.train.clone()
        };
        let dir = self.out(Path::new("cells").join(cell_label(n, mixer, seed)));
        let mut env = OffloadEnv::new(env_config)?;
        let mut monotonicity = Vec::new();
        let samples = self.spec.monotonicity_samples;
        let mut mono_rng = stream_rng(seed, STREAM_MONOTONICITY);
        let outcome = train(&mut env, &config, |learner, episode| {
            if mixer != MixerKind::Vdn && samples > 0 {
                let worst = monotonicity_check(
                    &learner.model.mixer,
                    &learner.online,
                    n,
                    OBS_DIM,
                    samples,
                    &mut mono_rng,
                )?;
                monotonicity.push((episode, worst));
            }
            if let Some(dir) = &dir {
                let ck = learner.checkpoint(episode)?;
                let name = if episode == config.episodes {
                    "final.ckpt".to_string()
                } else {
                    format!("checkpoint_ep{episode}.ckpt")
                };
                std::fs::create_dir_all(dir)?;
                ck.save(dir.join(name))?;
            }
            Ok(())
        })?;
        if let Some(dir) = &dir {
            let mut bytes = Vec::new();
            write_metrics(&mut bytes, &outcome.metrics)?;
            write_file(dir.join("metrics.csv"), &bytes)?;
        }
        Ok(TrainedCell {
            num_vehicles: n,
            mixer,
            seed,
            metrics: outcome.metrics,
            learner: outcome.learner,
            monotonicity,
        })
    }

    /// Trains every mixer on every seed at the base vehicle count. Writes
    /// `convergence.csv` (per-cell smoothed returns), `convergence_mean.csv`
    /// with its chart, and `final_rewards.csv`.
    pub fn run_convergence(&mut self) -> Result<ConvergenceReport> {
        let n = self.base_count();
        let mut report = ConvergenceReport::default();
        let mut done = Vec::new();
        for mixer in self.spec.mixers.clone() {
            for &seed in &self.spec.seeds.clone() {
                match self.train_cell(n, mixer, seed) {
                    Ok(cell) => {
                        report.finals.push((mixer, seed, cell.final_smoothed_return()));
                        done.push((n, mixer, seed));
                    }
                    Err(e) => report.failures.push(e),
                }
            }
        }
        if self.spec.out_dir.is_some() && !done.is_empty() {
            let cells: Vec<&TrainedCell> = done.iter().map(|k| &self.cells[k]).collect();
            let episodes = cells.iter().map(|c| c.metrics.len()).max().unwrap_or(0);
            let mut per_cell = Table::new(
                std::iter::once("episode".to_string())
                    .chain(cells.iter().map(|c| format!("{}_seed{}", c.mixer, c.seed))),
            );
            for e in 0..episodes {
                let mut row = vec![e.to_string()];
                row.extend(cells.iter().map(|c| {
                    c.metrics
                        .get(e)
                        .map(|m| fmt_float(m.smoothed_return))
                        .unwrap_or_default()
                }));
                per_cell.push(row);
            }
            per_cell.write(self.out("convergence.csv").expect("set"))?;

            let mixers: Vec<MixerKind> = self
                .spec
                .mixers
                .iter()
                .copied()
                .filter(|m| cells.iter().any(|c| c.mixer == *m))
                .collect();
            let mut mean =
                Table::new(std::iter::once("episode".to_string()).chain(mixers.iter().map(|m| m.to_string())));
            for e in 0..episodes {
                let mut row = vec![e.to_string()];
                for m in &mixers {
                    let vals: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.mixer == *m)
                        .filter_map(|c| c.metrics.get(e))
                        .map(|r| r.smoothed_return)
                        .collect();
                    row.push(fmt_float(vals.iter().sum::<f64>() / vals.len() as f64));
                }
                mean.push(row);
            }
            mean.write(self.out("convergence_mean.csv").expect("set"))?;
            let svg = render_line_chart(&mean, "Smoothed episode reward", "smoothed return")?;
            write_file(self.out("convergence.svg").expect("set"), svg.as_bytes())?;

            let mut finals = Table::new(["mixer", "seed", "final_smoothed_return", "min_monotonicity"]);
            for c in &cells {
                let mono = c
                    .monotonicity
                    .iter()
                    .map(|(_, v)| *v)
                    .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v))));
                finals.push(vec![
                    c.mixer.to_string(),
                    c.seed.to_string(),
                    fmt_float(c.final_smoothed_return()),
                    mono.map(fmt_float).unwrap_or_default(),
                ]);
            }
            finals.write(self.out("final_rewards.csv").expect("set"))?;
        }
        Ok(report)
    }

    /// Mean latency per vehicle count for every trained method and the
    /// baselines. `kmarl_transfer` evaluates the base-count KMARL checkpoint
    /// at every count. Writes `scalability_seeds.csv`, `scalability.csv` and
    /// its chart.
    pub fn run_scalability(&mut self) -> Result<ScalabilityReport> {
        let base = self.base_count();
        let episodes = self.spec.eval_episodes;
        let eval_seed = self.spec.eval_seed;
        let cap = self.spec.enumeration_cap;
        let mut report = ScalabilityReport::default();
        let push = |rows: &mut Vec<SweepRow>, n: usize, method: &str, seed: Option<u64>, v: f64| {
            rows.push(SweepRow {
                num_vehicles: n,
                method: method.into(),
                seed,
                mean_latency: v,
            })
        };
        for n in self.spec.vehicle_counts.clone() {
            let env = self.spec.env_for(n);
            push(
                &mut report.rows,
                n,
                "local",
                None,
                evaluate_policy(baselines::always_local, episodes, &env, eval_seed)?.mean_latency,
            );
            push(
                &mut report.rows,
                n,
                "greedy",
                None,
                evaluate_policy(baselines::greedy, episodes, &env, eval_seed)?.mean_latency,
            );
            if oracle_feasible(&env, cap) {
                push(
                    &mut report.rows,
                    n,
                    "oracle",
                    None,
                    evaluate_policy(baselines::exact, episodes, &env, eval_seed)?.mean_latency,
                );
            }
            for mixer in self.spec.mixers.clone() {
                for seed in self.spec.seeds.clone() {
                    if self.spec.retrain_per_count || n == base {
                        match self.train_cell(n, mixer, seed) {
                            Ok(cell) => {
                                let v = evaluate_learner(&cell.learner, &env, episodes, eval_seed)?.mean_latency;
                                push(&mut report.rows, n, mixer.as_str(), Some(seed), v);
                            }
                            Err(e) => report.failures.push(e),
                        }
                    }
                    if mixer == MixerKind::Kmarl {
                        match self.train_cell(base, mixer, seed) {
                            Ok(cell) => {
                                let ck = cell.learner.checkpoint(cell.metrics.len())?;
                                let moved = Learner::from_checkpoint(&ck, Some(n))?;
                                let v = evaluate_learner(&moved, &env, episodes, eval_seed)?.mean_latency;
                                push(&mut report.rows, n, "kmarl_transfer", Some(seed), v);
                            }
                            Err(e) => report.failures.push(e),
                        }
                    }
                }
            }
        }
        if self.spec.out_dir.is_some() {
            let mut long = Table::new(["vehicles", "method", "seed", "mean_latency"]);
            for r in &report.rows {
                long.push(vec![
                    r.num_vehicles.to_string(),
                    r.method.clone(),
                    r.seed.map(|s| s.to_string()).unwrap_or_default(),
                    fmt_float(r.mean_latency),
                ]);
            }
            long.write(self.out("scalability_seeds.csv").expect("set"))?;
            let wide = sweep_means(&report.rows);
            wide.write(self.out("scalability.csv").expect("set"))?;
            let svg = render_line_chart(&wide, "Mean latency vs vehicle count", "mean latency (s)")?;
            write_file(self.out("scalability.svg").expect("set"), svg.as_bytes())?;
        }
        Ok(report)
    }
}

/// Wide table: one row per vehicle count, one column per method (mean over seeds).
pub fn sweep_means(rows: &[SweepRow]) -> Table {
    let mut methods: Vec<String> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut counts: Vec<usize> = rows.iter().map(|r| r.num_vehicles).collect();
    counts.sort_unstable();
    counts.dedup();
    let mut t = Table::new(std::iter::once("vehicles".to_string()).chain(methods.iter().cloned()));
    for n in counts {
        let mut row = vec![n.to_string()];
        for m in &methods {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.num_vehicles == n && &r.method == m)
                .map(|r| r.mean_latency)
                .collect();
            row.push(if vals.is_empty() {
                String::new()
            } else {
                fmt_float(vals.iter().sum::<f64>() / vals.len() as f64)
            });
        }
        t.push(row);
    }
    t
}
