//! `tacbench bench`: throughput table across worker counts plus the
//! bitwise determinism check between them.

use crate::config::{effective_threads, load_config};
use crate::{CliError, ConfigArgs};
use anyhow::anyhow;
use tacbench_core::env::EnvBatch;
use tacbench_core::rng::{domain, StreamRng};

pub struct BenchRow {
    pub threads: usize,
    pub control_steps_per_s: f64,
    pub substeps_per_s: f64,
    pub digest: u64,
}

/// Steps `n_envs` environments `steps` times under a fixed random policy at
/// each thread count; returns one row per count. The digests must agree.
pub fn run_bench(
    cfg: &crate::config::RunConfig,
    n_envs: usize,
    steps: usize,
    thread_counts: &[usize],
) -> Result<Vec<BenchRow>, CliError> {
    let morph = cfg.resolve_morphology().map_err(CliError::config)?;
    let n_actions = morph.n_actions;
    let substeps = cfg.physics.substeps_per_control;
    let mut rows = Vec::new();
    for &threads in thread_counts {
        let mut env = EnvBatch::new(
            n_envs,
            domain::TRAIN_ENV,
            &cfg.env,
            morph.clone(),
            cfg.task.clone(),
            cfg.physics.clone(),
        )
        .map_err(CliError::config)?;
        env.threads = threads;
        env.reset_all();
        let mut actions = vec![0.0; n_envs * n_actions];
        let mut result = tacbench_core::env::StepResult::default();
        let started = std::time::Instant::now();
        for t in 0..steps {
            // Scripted random policy keyed by (seed, step, env): identical
            // for every thread count.
            for e in 0..n_envs {
                let mut rng =
                    StreamRng::from_key(&[cfg.env.seed, domain::BENCH, t as u64, e as u64]);
                for k in 0..n_actions {
                    actions[e * n_actions + k] = rng.range_f64(-1.0, 1.0);
                }
            }
            env.step_into(&actions, &mut result).map_err(CliError::runtime)?;
        }
        let elapsed = started.elapsed().as_secs_f64();
        let env_steps = (n_envs * steps) as f64;
        rows.push(BenchRow {
            threads,
            control_steps_per_s: env_steps / elapsed,
            substeps_per_s: env_steps * substeps as f64 / elapsed,
            digest: env.state_digest(),
        });
    }
    Ok(rows)
}

pub fn run(
    args: ConfigArgs,
    envs: Option<usize>,
    steps: usize,
    max_threads: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = if args.preset.is_none() && args.config.is_none() {
        crate::config::preset("desk_paddle_bounce").map_err(CliError::config)?
    } else {
        load_config(args.preset.as_deref(), args.config.as_deref()).map_err(CliError::config)?
    };
    if let Some(seed) = args.seed {
        cfg.env.seed = seed;
    }
    cfg.validate().map_err(CliError::config)?;
    let n_envs = envs.unwrap_or(1024);
    if n_envs == 0 || steps == 0 {
        return Err(CliError::Config(anyhow!("--envs and --steps must be positive")));
    }
    let max = max_threads.unwrap_or_else(|| effective_threads(args.threads.unwrap_or(0))).max(1);
    let mut counts = vec![1usize];
    while counts.last().unwrap() * 2 <= max {
        counts.push(counts.last().unwrap() * 2);
    }

    println!(
        "bench: {} x {}/{:?}, {} control steps per worker count",
        n_envs, cfg.env.morphology, cfg.env.task, steps
    );
    let rows = run_bench(&cfg, n_envs, steps, &counts)?;
    println!("{:>8} {:>18} {:>16} {:>18}", "threads", "control-steps/s", "substeps/s", "digest");
    for row in &rows {
        println!(
            "{:>8} {:>18.0} {:>16.0} {:>18}",
            row.threads,
            row.control_steps_per_s,
            row.substeps_per_s,
            format!("{:016x}", row.digest)
        );
    }
    let reference = rows[0].digest;
    if rows.iter().any(|r| r.digest != reference) {
        return Err(CliError::Runtime(anyhow!(
            "determinism violation: end states differ across thread counts"
        )));
    }
    println!("determinism: all {} worker counts produced identical end states", rows.len());
    Ok(())
}
