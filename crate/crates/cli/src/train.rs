//! `tacbench train`: the full training loop with metrics, checkpoints,
//! continuous evaluation, and clean shutdown on SIGINT/SIGTERM.

use crate::config::{load_config, RunConfig};
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::{CliError, ConfigArgs};
use anyhow::{anyhow, Context, Result};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use tacbench_core::ppo::Trainer;

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_signal_handler() {
    let handler = on_signal as extern "C" fn(libc::c_int) as *const () as libc::sighandler_t;
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

/// Exclusive ownership of an output directory for the lifetime of a run.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<RunLock> {
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(anyhow!(
                "output directory {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            )),
            Err(e) => Err(e).with_context(|| format!("creating lock file {}", path.display())),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn resolve_run_config(
    args: &ConfigArgs,
    total_steps: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut cfg = load_config(args.preset.as_deref(), args.config.as_deref())
        .map_err(CliError::config)?;
    if let Some(seed) = args.seed {
        cfg.env.seed = seed;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if let Some(total) = total_steps {
        cfg.total_env_steps = total;
    }
    cfg.validate().map_err(CliError::config)?;
    Ok(cfg)
}

pub fn run(args: ConfigArgs, out: PathBuf, total_steps: Option<u64>) -> Result<(), CliError> {
    let cfg = resolve_run_config(&args, total_steps)?;
    let morph = cfg.resolve_morphology().map_err(CliError::config)?;

    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(CliError::runtime)?;
    let _lock = RunLock::acquire(&out).map_err(CliError::runtime)?;
    std::fs::write(out.join("config.toml"), toml::to_string_pretty(&cfg).expect("serializes"))
        .context("writing resolved config")
        .map_err(CliError::runtime)?;

    install_signal_handler();
    INTERRUPTED.store(false, Ordering::SeqCst);

    let mut trainer =
        Trainer::new(cfg.trainer_config(), morph).map_err(CliError::runtime)?;
    let mut writer = MetricsWriter::append(&out.join("metrics.jsonl")).map_err(CliError::runtime)?;

    println!(
        "training {}/{:?}/{:?}: {} train envs, {} eval envs, obs {} x{}, {} params, {} threads",
        cfg.env.morphology,
        cfg.env.task,
        cfg.env.observation_mode,
        cfg.env.n_train,
        cfg.env.n_eval,
        trainer.train_envs.frame_width(),
        cfg.env.stack_k,
        trainer.net.n_params(),
        trainer.cfg.threads,
    );

    let started = std::time::Instant::now();
    let mut next_eval = 0u64;
    let mut next_checkpoint =
        if cfg.checkpoint_interval > 0 { cfg.checkpoint_interval } else { u64::MAX };
    let mut interrupted = false;

    while trainer.env_steps < cfg.total_env_steps {
        let stats = trainer.train_iteration();
        let eval = if stats.env_steps >= next_eval {
            next_eval = stats.env_steps.saturating_add(cfg.eval_interval);
            Some(trainer.evaluate(cfg.eval_episodes))
        } else {
            None
        };
        let record = MetricsRecord::new(&stats, eval.as_ref(), started.elapsed().as_secs_f64());
        writer.write(&record).map_err(CliError::runtime)?;
        if let Some(ref e) = eval {
            println!(
                "iter {:5}  steps {:>10}  eval {:>8.1} ± {:<6.1}  train {:>8.1}  kl {:.4}  lr {:.1e}",
                stats.iteration,
                stats.env_steps,
                e.mean_return,
                e.std_return,
                stats.mean_train_return.unwrap_or(f64::NAN),
                stats.approx_kl,
                stats.lr,
            );
        }
        if stats.env_steps >= next_checkpoint {
            next_checkpoint = stats.env_steps.saturating_add(cfg.checkpoint_interval);
            let path = out.join(format!("checkpoint_{:012}.ckpt", stats.env_steps));
            trainer.save_checkpoint(&path).map_err(CliError::runtime)?;
        }
        if INTERRUPTED.load(Ordering::SeqCst) {
            interrupted = true;
            break;
        }
    }

    // The final checkpoint is always written, interrupt included.
    trainer
        .save_checkpoint(&out.join("checkpoint_final.ckpt"))
        .map_err(CliError::runtime)?;
    if interrupted {
        return Err(CliError::Runtime(anyhow!(
            "interrupted at {} env-steps; checkpoint flushed to {}",
            trainer.env_steps,
            out.join("checkpoint_final.ckpt").display()
        )));
    }
    println!(
        "done: {} env-steps in {:.1}s; final checkpoint {}",
        trainer.env_steps,
        started.elapsed().as_secs_f64(),
        out.join("checkpoint_final.ckpt").display()
    );
    Ok(())
}
