use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kmarl::harness::{
    describe_config, evaluate_learner, oracle_gap, oracle_instances, render_line_chart, Experiment, ExperimentSpec,
    Table,
};
use kmarl::mixers::MixerKind;
use kmarl::numkit::Checkpoint;
use kmarl::oracle::{baselines, evaluate_policy};
use kmarl::trainer::{fmt_float, Learner};
use kmarl::{Error, Result};

#[derive(Parser)]
#[command(name = "kmarl", version, about = "Multi-agent offloading experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment spec (TOML); desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Runs this single seed instead of the spec's list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Runs this single mixer instead of the spec's list.
    #[arg(long, value_enum)]
    mixer: Option<MixerKind>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::desk(),
        };
        if let Some(s) = self.seed {
            spec.seeds = vec![s];
        }
        if let Some(m) = self.mixer {
            spec.mixers = vec![m];
        }
        if self.out_dir.is_some() {
            spec.out_dir.clone_from(&self.out_dir);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Trains every (mixer, seed) cell at the base vehicle count.
    Train(Common),
    /// Evaluates a checkpoint's greedy policy against the baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vehicle count to evaluate at; defaults to the spec's.
        #[arg(long)]
        vehicles: Option<usize>,
    },
    /// Mean latency across the spec's vehicle counts.
    Sweep(Common),
    /// Gap between a trained policy and the exact per-slot optimum.
    OracleGap {
        #[command(flatten)]
        common: Common,
        /// Trains a fresh cell when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        vehicles: usize,
        /// Random slots compared exactly against the greedy heuristic.
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
    /// Prints every config key with type, default and mirrored setting.
    DescribeConfig,
    /// Renders a CSV (first column x, others series) to an SVG line chart.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long, default_value = "value")]
        y_label: String,
    },
}

fn report_failures(failures: &[Error]) -> ExitCode {
    for f in failures {
        eprintln!("error: {f}");
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn write_or_print(table: &Table, out_dir: Option<&PathBuf>, name: &str) -> Result<()> {
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            table.write(dir.join(name))
        }
        None => {
            print!("{}", table.to_csv()?);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(common) => {
            let mut exp = Experiment::new(common.spec()?)?;
            let report = exp.run_convergence()?;
            for (m, s, v) in &report.finals {
                println!("{m} seed {s}: final smoothed return {}", fmt_float(*v));
            }
            Ok(report_failures(&report.failures))
        }
        Command::Evaluate {
            common,
            checkpoint,
            vehicles,
        } => {
            let spec = common.spec()?;
            let ck = Checkpoint::load(&checkpoint)?;
            let n = vehicles.unwrap_or(spec.env.num_vehicles);
            let learner = Learner::from_checkpoint(&ck, Some(n))?;
            let env = spec.env_for(n);
            let (episodes, seed) = (spec.eval_episodes, spec.eval_seed);
            let mut t = Table::new(["method", "mean_latency", "mean_reward"]);
            let policy = evaluate_learner(&learner, &env, episodes, seed)?;
            t.push(vec![
                learner.config.mixer.to_string(),
                fmt_float(policy.mean_latency),
                fmt_float(policy.mean_reward),
            ]);
            for (name, e) in [
                ("local", evaluate_policy(baselines::always_local, episodes, &env, seed)?),
                ("greedy", evaluate_policy(baselines::greedy, episodes, &env, seed)?),
            ] {
                t.push(vec![name.into(), fmt_float(e.mean_latency), fmt_float(e.mean_reward)]);
            }
            write_or_print(&t, spec.out_dir.as_ref(), "evaluation.csv")?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(common) => {
            let mut exp = Experiment::new(common.spec()?)?;
            let report = exp.run_scalability()?;
            if exp.spec.out_dir.is_none() {
                print!("{}", kmarl::harness::sweep_means(&report.rows).to_csv()?);
            }
            Ok(report_failures(&report.failures))
        }
        Command::OracleGap {
            common,
            checkpoint,
            vehicles,
            instances,
        } => {
            let mut spec = common.spec()?;
            let env = spec.env_for(vehicles);
            let learner = match checkpoint {
                Some(p) => Learner::from_checkpoint(&Checkpoint::load(p)?, Some(vehicles))?,
                None => {
                    let mixer = common.mixer.unwrap_or(MixerKind::Kmarl);
                    let seed = spec.seeds[0];
                    spec.env = env.clone();
                    let mut exp = Experiment::new(spec.clone())?;
                    exp.train_cell(vehicles, mixer, seed)?.learner.clone()
                }
            };
            let gap = oracle_gap(&learner, &env, spec.eval_episodes, spec.eval_seed, spec.enumeration_cap)?;
            write_or_print(&gap.table(), spec.out_dir.as_ref(), "oracle_gap.csv")?;
            let per_instance = oracle_instances(&env, instances, spec.eval_seed, spec.enumeration_cap)?;
            write_or_print(&per_instance, spec.out_dir.as_ref(), "oracle_instances.csv")?;
            Ok(ExitCode::SUCCESS)
        }
        Command::DescribeConfig => {
            print!("{}", describe_config());
            Ok(ExitCode::SUCCESS)
        }
        Command::Render {
            input,
            output,
            title,
            y_label,
        } => {
            let svg = render_line_chart(&Table::read(&input)?, &title, &y_label)?;
            std::fs::write(output, svg)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
