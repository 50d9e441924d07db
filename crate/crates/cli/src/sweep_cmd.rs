//! `tacbench sweep`: sequential hyperparameter search with a resumable
//! line-delimited history file.

use crate::train::resolve_run_config;
use crate::{CliError, ConfigArgs};
use anyhow::Context;
use std::path::PathBuf;
use tacbench_core::ppo::Trainer;
use tacbench_core::sweep::{run_sweep, SearchSpace, SweepConfig, TrialRecord, TrialStatus};

pub fn run(
    args: ConfigArgs,
    out: PathBuf,
    trials: usize,
    warmup: usize,
    budget_steps: Option<u64>,
) -> Result<(), CliError> {
    let mut cfg = resolve_run_config(&args, None)?;
    if let Some(budget) = budget_steps {
        cfg.total_env_steps = budget;
    }
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(CliError::runtime)?;

    let space = SearchSpace::default_ppo();
    let sweep_cfg = SweepConfig {
        n_trials: trials,
        n_warmup: warmup,
        seed: cfg.env.seed,
        history_path: out.join("history.jsonl"),
    };
    let morph = cfg.resolve_morphology().map_err(CliError::config)?;
    let budget = cfg.total_env_steps;
    let eval_episodes = cfg.eval_episodes;
    let eval_interval = cfg.eval_interval.min(budget.max(1));

    let objective = |trial: &TrialRecord| -> Result<f64, String> {
        let mut tc = cfg.trainer_config();
        space.apply(&trial.params, &mut tc.hp);
        tc.env.seed = trial.seed;
        let violations = tc.hp.validate(tc.env.n_train);
        if !violations.is_empty() {
            return Err(format!("sampled hyperparameters invalid: {violations:?}"));
        }
        let mut trainer = Trainer::new(tc, morph.clone()).map_err(|e| e.to_string())?;
        // Objective: mean evaluation return over the last 10% of the budget.
        let tail_start = budget - budget / 10;
        let mut tail_returns = Vec::new();
        let mut next_eval = eval_interval;
        while trainer.env_steps < budget {
            let stats = trainer.train_iteration();
            let due = stats.env_steps >= next_eval;
            let last = stats.env_steps >= budget;
            if due || last {
                next_eval = stats.env_steps.saturating_add(eval_interval);
                let report = trainer.evaluate(eval_episodes);
                if stats.env_steps >= tail_start {
                    tail_returns.push(report.mean_return);
                }
            }
        }
        if tail_returns.is_empty() {
            return Err("no evaluation fell inside the objective window".into());
        }
        Ok(tail_returns.iter().sum::<f64>() / tail_returns.len() as f64)
    };

    let outcome = run_sweep(&space, &sweep_cfg, |trial| {
        println!("trial {:2} {} params {:?}", trial.index, if trial.warmup { "warmup" } else { "guided" }, trial.params);
        let r = objective(trial);
        match &r {
            Ok(v) => println!("trial {:2} objective {v:.2}", trial.index),
            Err(e) => println!("trial {:2} FAILED: {e}", trial.index),
        }
        r
    })
    .map_err(CliError::runtime)?;

    if outcome.resumed_trials > 0 {
        println!("resumed: {} trials already recorded", outcome.resumed_trials);
    }
    let failed = outcome.history.iter().filter(|t| t.status == TrialStatus::Failed).count();
    println!("history: {} trials ({failed} failed) in {}", outcome.history.len(), sweep_cfg.history_path.display());
    match outcome.best() {
        Some(best) => {
            println!("best trial {} objective {:.2}", best.index, best.objective.unwrap());
            for (d, v) in space.dims.iter().zip(&best.params) {
                println!("  {} = {v}", d.name);
            }
        }
        None => println!("no finished trial produced an objective"),
    }
    Ok(())
}
