//! `tacbench eval`: deterministic evaluation of a saved checkpoint.

use crate::config::effective_threads;
use crate::CliError;
use anyhow::anyhow;
use std::path::PathBuf;
use tacbench_core::ppo::Trainer;
use tacbench_core::tasks::TaskKind;

pub fn run(checkpoint: PathBuf, episodes: usize, threads: Option<usize>) -> Result<(), CliError> {
    if episodes == 0 {
        return Err(CliError::Config(anyhow!("--episodes must be positive")));
    }
    let mut trainer = Trainer::load_checkpoint(&checkpoint)
        .map_err(|e| CliError::Runtime(anyhow!("loading {}: {e}", checkpoint.display())))?;
    trainer.cfg.threads = effective_threads(threads.unwrap_or(trainer.cfg.threads));

    let task = trainer.cfg.task.task;
    println!(
        "checkpoint {} (iteration {}, {} env-steps, {}/{:?})",
        checkpoint.display(),
        trainer.iteration,
        trainer.env_steps,
        trainer.cfg.env.morphology,
        task,
    );
    let report = trainer.evaluate(episodes);
    println!("episodes   {}", report.episodes);
    println!("return     {:.2} ± {:.2}", report.mean_return, report.std_return);
    println!("ep length  {:.1}", report.mean_length);
    match task {
        TaskKind::Bounce => println!("bounces    {:.2}", report.mean_bounces),
        TaskKind::Baoding => {
            println!("switches   {:.2}", report.mean_switches);
            println!("rotations  {:.2}", report.mean_rotations);
        }
    }
    Ok(())
}
