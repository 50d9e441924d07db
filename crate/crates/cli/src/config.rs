//! Run configuration: TOML files, named presets, and validation.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tacbench_core::env::{EnvBatchConfig, ObservationMode};
use tacbench_core::morphology::MorphologyConfig;
use tacbench_core::physics::PhysicsConfig;
use tacbench_core::ppo::{PpoHyperparams, TrainerConfig};
use tacbench_core::tasks::{TaskConfig, TaskKind};

/// Everything one run needs. TOML layout mirrors the struct: `[env]`,
/// `[physics]`, `[task]`, `[hp]` tables plus top-level scalars.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvBatchConfig,
    pub physics: PhysicsConfig,
    pub task: TaskConfig,
    pub hp: PpoHyperparams,
    /// Encoder layer widths.
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    /// Worker threads (0 = all available, capped by TACBENCH_MAX_THREADS).
    pub threads: usize,
    /// Training budget in environment steps.
    pub total_env_steps: u64,
    /// Environment steps between evaluation rounds.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Environment steps between periodic checkpoints (0 = final only).
    pub checkpoint_interval: u64,
    /// Load the morphology from this file instead of the builtin table.
    pub morphology_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvBatchConfig::default(),
            physics: PhysicsConfig::default(),
            task: TaskConfig::default(),
            hp: PpoHyperparams::default(),
            hidden: vec![256, 256],
            log_std_init: -0.5,
            threads: 0,
            total_env_steps: 10_000_000,
            eval_interval: 500_000,
            eval_episodes: 100,
            checkpoint_interval: 0,
            morphology_file: None,
        }
    }
}

impl RunConfig {
    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            env: self.env.clone(),
            physics: self.physics.clone(),
            task: self.task.clone(),
            hp: self.hp.clone(),
            hidden: self.hidden.clone(),
            log_std_init: self.log_std_init,
            threads: effective_threads(self.threads),
        }
    }

    pub fn resolve_morphology(&self) -> Result<MorphologyConfig> {
        if let Some(path) = &self.morphology_file {
            return MorphologyConfig::from_file(path)
                .with_context(|| format!("morphology_file {}", path.display()));
        }
        MorphologyConfig::builtin(&self.env.morphology)
            .map_err(|e| anyhow!("field `env.morphology`: {e}"))
    }

    /// Structural checks beyond what the trainer enforces; error messages
    /// name the offending field.
    pub fn validate(&self) -> Result<()> {
        let morph = self.resolve_morphology()?;
        let violations = morph.validate();
        if !violations.is_empty() {
            bail!("field `env.morphology`: invalid morphology: {violations:?}");
        }
        let mut all = Vec::new();
        for (field, vs) in [
            ("env", self.env.validate()),
            ("physics", self.physics.validate()),
            ("task", self.task.validate()),
            ("hp", self.hp.validate(self.env.n_train)),
        ] {
            for v in vs {
                all.push(format!("field `{field}`: {v}"));
            }
        }
        if self.hidden.is_empty() {
            all.push("field `hidden`: must not be empty".into());
        }
        if self.total_env_steps == 0 {
            all.push("field `total_env_steps`: must be positive".into());
        }
        if self.eval_interval == 0 {
            all.push("field `eval_interval`: must be positive".into());
        }
        if self.eval_episodes == 0 {
            all.push("field `eval_episodes`: must be positive".into());
        }
        if all.is_empty() {
            Ok(())
        } else {
            bail!("{}", all.join("\n"))
        }
    }
}

/// Worker-thread resolution: explicit > 0 wins, 0 means all cores; the
/// TACBENCH_MAX_THREADS environment variable caps either.
pub fn effective_threads(requested: usize) -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let base = if requested == 0 { available } else { requested };
    let cap = std::env::var("TACBENCH_MAX_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(usize::MAX);
    base.min(cap).max(1)
}

/// Builds a named preset.
///
/// Desk-scale presets (`desk_paddle_bounce`, `desk_paddle_baoding`) run
/// 1,024 training environments on the two-joint paddle. Benchmark-scale
/// presets follow the pattern `paper_<morphology>_<task>_<mode>` (e.g.
/// `paper_shadow_baoding_blind`) with 8,092 training environments.
pub fn preset(name: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    match name {
        "desk_paddle_bounce" | "desk_paddle_baoding" => {
            cfg.env.morphology = "paddle".into();
            cfg.env.task =
                if name.ends_with("baoding") { TaskKind::Baoding } else { TaskKind::Bounce };
            cfg.env.n_train = 1024;
            cfg.env.n_eval = 100;
            cfg.hidden = vec![64, 64];
            cfg.log_std_init = -2.0;
            cfg.hp.rollout_horizon = 32;
            cfg.hp.n_minibatches = 4;
            cfg.hp.entropy_coef = 0.01;
            cfg.task.task = cfg.env.task;
            cfg.total_env_steps = 5_000_000;
            cfg.eval_interval = 250_000;
            cfg.checkpoint_interval = 1_000_000;
            Ok(cfg)
        }
        _ => {
            let rest = name
                .strip_prefix("paper_")
                .ok_or_else(|| anyhow!("unknown preset `{name}`; see `tacbench presets`"))?;
            // Parse from the end: mode, then task; the morphology name may
            // itself contain underscores (shadow_lite).
            let (rest, mode) = rest
                .rsplit_once('_')
                .ok_or_else(|| anyhow!("preset `{name}`: expected paper_<morph>_<task>_<mode>"))?;
            let (morph, task) = rest
                .rsplit_once('_')
                .ok_or_else(|| anyhow!("preset `{name}`: expected paper_<morph>_<task>_<mode>"))?;
            cfg.env.observation_mode = match mode {
                "blind" => ObservationMode::Blind,
                "state" => ObservationMode::State,
                other => bail!("preset `{name}`: unknown observation mode `{other}`"),
            };
            cfg.env.task = task.parse().map_err(|e| anyhow!("preset `{name}`: {e}"))?;
            cfg.task.task = cfg.env.task;
            MorphologyConfig::builtin(morph).map_err(|e| anyhow!("preset `{name}`: {e}"))?;
            cfg.env.morphology = morph.into();
            cfg.env.n_train = 8092;
            cfg.env.n_eval = 100;
            cfg.hidden = vec![256, 256];
            cfg.total_env_steps = 200_000_000;
            cfg.eval_interval = 2_000_000;
            cfg.checkpoint_interval = 20_000_000;
            Ok(cfg)
        }
    }
}

pub fn preset_names() -> Vec<String> {
    let mut names = vec!["desk_paddle_bounce".to_string(), "desk_paddle_baoding".to_string()];
    for morph in ["shadow", "shadow_lite", "allegro", "orca"] {
        for task in ["bounce", "baoding"] {
            for mode in ["blind", "state"] {
                names.push(format!("paper_{morph}_{task}_{mode}"));
            }
        }
    }
    names
}

/// Loads a run configuration: preset and/or TOML file. When both are given
/// the file's values override the preset's, table by table, key by key.
pub fn load_config(preset_name: Option<&str>, path: Option<&Path>) -> Result<RunConfig> {
    let base = match preset_name {
        Some(name) => preset(name)?,
        None => RunConfig::default(),
    };
    let Some(path) = path else {
        if preset_name.is_none() {
            bail!("either --preset or --config is required");
        }
        return Ok(base);
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let overlay: toml::Value = text
        .parse()
        .map_err(|e| anyhow!("parsing {}: {e}", path.display()))?;
    let mut merged = toml::Value::try_from(&base).expect("config serializes");
    merge_toml(&mut merged, overlay);
    let cfg: RunConfig = merged
        .try_into()
        .map_err(|e| anyhow!("in {}: {e}", path.display()))?;
    Ok(cfg)
}

fn merge_toml(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(base_t), toml::Value::Table(overlay_t)) => {
            for (k, v) in overlay_t {
                match base_t.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        base_t.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in preset_names() {
            let cfg = preset(&name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(preset("desk_sasquatch").is_err());
        assert!(preset("paper_sasquatch_bounce_blind").is_err());
        assert!(preset("paper_shadow_bounce_psychic").is_err());
    }

    #[test]
    fn config_file_overrides_preset_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("over.toml");
        std::fs::write(&path, "total_env_steps = 1234\n[env]\nseed = 9\n[hp]\ngamma = 0.9\n")
            .unwrap();
        let cfg = load_config(Some("desk_paddle_bounce"), Some(&path)).unwrap();
        assert_eq!(cfg.total_env_steps, 1234);
        assert_eq!(cfg.env.seed, 9);
        assert_eq!(cfg.hp.gamma, 0.9);
        // Untouched preset values survive.
        assert_eq!(cfg.env.n_train, 1024);
        assert_eq!(cfg.env.morphology, "paddle");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[env]\nseed = \"not a number\"\n").unwrap();
        let err = load_config(None, Some(&path)).unwrap_err().to_string();
        assert!(err.contains("line 2") || err.contains("invalid type"), "{err}");
    }

    #[test]
    fn unknown_morphology_names_the_field() {
        let mut cfg = preset("desk_paddle_bounce").unwrap();
        cfg.env.morphology = "sixfinger".into();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("env.morphology"), "{err}");
        assert!(err.contains("sixfinger"), "{err}");
    }
}
