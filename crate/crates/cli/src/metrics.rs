//! Line-delimited metrics stream.
//!
//! One JSON object per training iteration, appended and flushed
//! immediately, so a crash can at worst truncate the final line without
//! touching earlier records.

use anyhow::{Context, Result};
use serde::Serialize;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use tacbench_core::ppo::{EvalReport, IterationStats};

#[derive(Serialize)]
pub struct MetricsRecord<'a> {
    pub iteration: u64,
    pub env_steps: u64,
    pub samples: usize,
    pub episodes_finished: usize,
    pub mean_train_return: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub aux_loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub rolled_back: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<&'a EvalReport>,
    // Timing fields are inherently non-deterministic; consumers comparing
    // runs for reproducibility drop these two keys.
    pub wall_clock_s: f64,
    pub sps: f64,
}

impl<'a> MetricsRecord<'a> {
    pub fn new(stats: &IterationStats, eval: Option<&'a EvalReport>, elapsed_s: f64) -> Self {
        Self {
            iteration: stats.iteration,
            env_steps: stats.env_steps,
            samples: stats.samples,
            episodes_finished: stats.episodes_finished,
            mean_train_return: stats.mean_train_return,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            aux_loss: stats.aux_loss,
            grad_norm: stats.grad_norm,
            lr: stats.lr,
            rolled_back: stats.rolled_back,
            eval,
            wall_clock_s: elapsed_s,
            sps: if stats.wall_clock_s > 0.0 {
                stats.samples as f64 / stats.wall_clock_s
            } else {
                0.0
            },
        }
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening metrics file {}", path.display()))?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &MetricsRecord<'_>) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}
