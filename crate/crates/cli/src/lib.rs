//! Run plumbing behind the `tacbench` binary: config loading and presets,
//! the train/eval/sweep/bench commands, and the metrics stream format.
//! Lives in a library target so integration tests can drive the same code
//! paths the binary uses.

pub mod bench;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod sweep_cmd;
pub mod train;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Error classification drives the exit code: 2 for configuration problems
/// (bad flags, presets, config files), 1 for runtime failures.
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn config<E: Into<anyhow::Error>>(e: E) -> Self {
        CliError::Config(e.into())
    }

    pub fn runtime<E: Into<anyhow::Error>>(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(
    name = "tacbench",
    about = "Batched tactile-manipulation RL benchmark: simplified hand physics, \
             bounce/baoding tasks, PPO training, hyperparameter sweeps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
pub struct ConfigArgs {
    /// Named preset (see `tacbench presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML run config; overrides preset values field by field.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores; TACBENCH_MAX_THREADS caps).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics + checkpoints to --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (created; exclusively owned via a lock file).
        #[arg(long)]
        out: PathBuf,
        /// Override the training budget in env-steps.
        #[arg(long)]
        total_steps: Option<u64>,
    },
    /// Evaluate a checkpoint over deterministic episodes.
    Eval {
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes to aggregate.
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Hyperparameter sweep over the seven searched PPO parameters.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (holds history.jsonl; resumable).
        #[arg(long)]
        out: PathBuf,
        /// Total trials.
        #[arg(long, default_value_t = 40)]
        trials: usize,
        /// Purely random warm-up trials.
        #[arg(long, default_value_t = 8)]
        warmup: usize,
        /// Per-trial training budget in env-steps.
        #[arg(long)]
        budget_steps: Option<u64>,
    },
    /// Throughput and thread-count determinism check.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Environments to step.
        #[arg(long)]
        envs: Option<usize>,
        /// Control steps to run per thread count.
        #[arg(long, default_value_t = 240)]
        steps: usize,
        /// Largest worker count tried (1, 2, 4, ... up to this).
        #[arg(long)]
        max_threads: Option<usize>,
    },
    /// List available presets.
    Presets,
}

pub fn cli_main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { cfg, out, total_steps } => train::run(cfg, out, total_steps),
        Command::Eval { checkpoint, episodes, threads } => eval::run(checkpoint, episodes, threads),
        Command::Sweep { cfg, out, trials, warmup, budget_steps } => {
            sweep_cmd::run(cfg, out, trials, warmup, budget_steps)
        }
        Command::Bench { cfg, envs, steps, max_threads } => {
            bench::run(cfg, envs, steps, max_threads)
        }
        Command::Presets => {
            for name in config::preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
    }
}
