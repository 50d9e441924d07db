//! Hyperparameter search over seven PPO parameters.
//!
//! Forty trials by default: the first eight are purely random (warm-up,
//! history-independent), the rest are guided by a tree-structured
//! Parzen-style split of the finished trials into a good set (top quartile
//! by objective) and a bad set (everything else, plus failed trials).
//! Candidates are drawn from the good density and ranked by the
//! log-likelihood ratio between the two densities.
//!
//! Trials are recorded to a line-delimited history file after every trial
//! (write-temp-then-rename, so a crash never corrupts earlier records), and
//! a sweep restarted on the same file resumes after the last record.

use crate::ppo::PpoHyperparams;
use crate::rng::{domain, StreamRng};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Candidates drawn from the good density per guided trial.
const N_CANDIDATES: usize = 24;
/// Fraction of finished trials forming the good split.
const GOOD_QUANTILE: f64 = 0.25;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    /// Discrete numeric options (e.g. rollout horizons).
    Choice { options: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    /// The seven searched PPO parameters.
    pub fn default_ppo() -> SearchSpace {
        let dims = vec![
            Dimension {
                name: "learning_rate".into(),
                kind: DimKind::LogUniform { lo: 1e-5, hi: 1e-3 },
            },
            Dimension { name: "gamma".into(), kind: DimKind::Uniform { lo: 0.95, hi: 0.999 } },
            Dimension { name: "gae_lambda".into(), kind: DimKind::Uniform { lo: 0.9, hi: 1.0 } },
            Dimension {
                name: "clip_epsilon".into(),
                kind: DimKind::Uniform { lo: 0.1, hi: 0.3 },
            },
            Dimension {
                name: "entropy_coef".into(),
                kind: DimKind::LogUniform { lo: 1e-4, hi: 1e-1 },
            },
            Dimension {
                name: "rollout_horizon".into(),
                kind: DimKind::Choice { options: vec![16.0, 32.0, 64.0] },
            },
            Dimension {
                name: "n_minibatches".into(),
                kind: DimKind::Choice { options: vec![2.0, 4.0, 8.0] },
            },
        ];
        SearchSpace { dims }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.dims.is_empty() {
            v.push("search space has no dimensions".into());
        }
        for d in &self.dims {
            match &d.kind {
                DimKind::Uniform { lo, hi } => {
                    if !(lo < hi) {
                        v.push(format!("{}: bounds must be strictly ordered", d.name));
                    }
                }
                DimKind::LogUniform { lo, hi } => {
                    if !(*lo > 0.0 && lo < hi) {
                        v.push(format!("{}: log bounds must be positive and ordered", d.name));
                    }
                }
                DimKind::Choice { options } => {
                    if options.is_empty() {
                        v.push(format!("{}: choice needs options", d.name));
                    }
                }
            }
        }
        v
    }

    /// Writes the named sampled values onto a hyperparameter struct.
    pub fn apply(&self, values: &[f64], hp: &mut PpoHyperparams) {
        for (d, &v) in self.dims.iter().zip(values) {
            match d.name.as_str() {
                "learning_rate" => hp.learning_rate = v,
                "gamma" => hp.gamma = v,
                "gae_lambda" => hp.gae_lambda = v,
                "clip_epsilon" => hp.clip_epsilon = v,
                "entropy_coef" => hp.entropy_coef = v,
                "rollout_horizon" => hp.rollout_horizon = v as usize,
                "n_minibatches" => hp.n_minibatches = v as usize,
                _ => {}
            }
        }
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dims.len()
            && self.dims.iter().zip(values).all(|(d, &v)| match &d.kind {
                DimKind::Uniform { lo, hi } => v >= *lo && v <= *hi,
                DimKind::LogUniform { lo, hi } => v >= *lo && v <= *hi,
                DimKind::Choice { options } => options.contains(&v),
            })
    }

    /// Maps a value vector to [0,1]^d coordinates (log scale for log dims,
    /// index scale for choices). Used by density fitting and test objectives.
    pub fn normalized(&self, values: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(values)
            .map(|(d, &v)| match &d.kind {
                DimKind::Uniform { lo, hi } => (v - lo) / (hi - lo),
                DimKind::LogUniform { lo, hi } => (v.ln() - lo.ln()) / (hi.ln() - lo.ln()),
                DimKind::Choice { options } => {
                    let idx = options
                        .iter()
                        .position(|o| o == &v)
                        .expect("value comes from this space");
                    if options.len() == 1 { 0.0 } else { idx as f64 / (options.len() - 1) as f64 }
                }
            })
            .collect()
    }

    fn sample_uniform(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| match &d.kind {
                DimKind::Uniform { lo, hi } => rng.range_f64(*lo, *hi),
                DimKind::LogUniform { lo, hi } => rng.log_uniform(*lo, *hi),
                DimKind::Choice { options } => options[rng.below(options.len() as u64) as usize],
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Done,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub params: Vec<f64>,
    /// Present exactly for `Done` trials.
    pub objective: Option<f64>,
    pub seed: u64,
    pub status: TrialStatus,
    pub warmup: bool,
}

/// Draws the next trial's parameters. Trials below the warm-up count are
/// uniform and depend only on (seed, trial index); later trials are guided
/// by the good/bad density split of the history. Failed trials count as bad.
pub fn sample_trial(
    history: &[TrialRecord],
    space: &SearchSpace,
    seed: u64,
    n_warmup: usize,
) -> Vec<f64> {
    let trial_index = history.len();
    let mut rng = StreamRng::from_key(&[seed, domain::SWEEP, trial_index as u64]);
    if trial_index < n_warmup {
        return space.sample_uniform(&mut rng);
    }

    let mut done: Vec<(&TrialRecord, f64)> = history
        .iter()
        .filter_map(|t| t.objective.map(|o| (t, o)))
        .collect();
    let failed: Vec<&TrialRecord> =
        history.iter().filter(|t| t.status == TrialStatus::Failed).collect();
    if done.len() < 2 {
        return space.sample_uniform(&mut rng);
    }
    // Degenerate split: all objectives identical.
    let first = done[0].1;
    if done.iter().all(|(_, o)| *o == first) {
        return space.sample_uniform(&mut rng);
    }
    // Maximize: good = top quantile.
    done.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let n_good = ((done.len() as f64 * GOOD_QUANTILE).ceil() as usize).max(1);
    if n_good < 2 {
        return space.sample_uniform(&mut rng);
    }
    let good: Vec<Vec<f64>> =
        done[..n_good].iter().map(|(t, _)| space.normalized(&t.params)).collect();
    let mut bad: Vec<Vec<f64>> =
        done[n_good..].iter().map(|(t, _)| space.normalized(&t.params)).collect();
    bad.extend(failed.iter().map(|t| space.normalized(&t.params)));
    if bad.len() < 2 {
        return space.sample_uniform(&mut rng);
    }

    // Per-dimension densities in normalized coordinates.
    let n_dims = space.dims.len();
    let good_cols: Vec<Vec<f64>> =
        (0..n_dims).map(|d| good.iter().map(|g| g[d]).collect()).collect();
    let bad_cols: Vec<Vec<f64>> = (0..n_dims).map(|d| bad.iter().map(|g| g[d]).collect()).collect();

    let mut best_score = f64::NEG_INFINITY;
    let mut best: Option<Vec<f64>> = None;
    for _ in 0..N_CANDIDATES {
        // Draw from the good density: jitter a random good point per dim.
        let candidate: Vec<f64> = (0..n_dims)
            .map(|d| match &space.dims[d].kind {
                DimKind::Choice { options } => {
                    // Smoothed categorical draw from the good counts.
                    let k = options.len();
                    let mut weights: Vec<f64> = vec![1.0; k];
                    for &g in &good_cols[d] {
                        let idx = if k == 1 { 0 } else { (g * (k - 1) as f64).round() as usize };
                        weights[idx.min(k - 1)] += 1.0;
                    }
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.next_f64() * total;
                    let mut idx = k - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            idx = i;
                            break;
                        }
                        u -= w;
                    }
                    if k == 1 { 0.0 } else { idx as f64 / (k - 1) as f64 }
                }
                _ => {
                    let pick = rng.below(good_cols[d].len() as u64) as usize;
                    let bw = silverman_bandwidth(&good_cols[d]);
                    (good_cols[d][pick] + bw * rng.normal()).clamp(0.0, 1.0)
                }
            })
            .collect();
        let mut score = 0.0;
        for d in 0..n_dims {
            match &space.dims[d].kind {
                DimKind::Choice { options } => {
                    let k = options.len();
                    score += smoothed_log_prob(&good_cols[d], candidate[d], k)
                        - smoothed_log_prob(&bad_cols[d], candidate[d], k);
                }
                _ => {
                    score += kde_log_density(&good_cols[d], candidate[d])
                        - kde_log_density(&bad_cols[d], candidate[d]);
                }
            }
        }
        if score > best_score {
            best_score = score;
            best = Some(candidate);
        }
    }
    denormalize(space, &best.expect("at least one candidate"))
}

fn denormalize(space: &SearchSpace, coords: &[f64]) -> Vec<f64> {
    space
        .dims
        .iter()
        .zip(coords)
        .map(|(d, &c)| match &d.kind {
            DimKind::Uniform { lo, hi } => lo + c * (hi - lo),
            DimKind::LogUniform { lo, hi } => (lo.ln() + c * (hi.ln() - lo.ln())).exp().clamp(*lo, *hi),
            DimKind::Choice { options } => {
                let k = options.len();
                let idx = if k == 1 { 0 } else { (c * (k - 1) as f64).round() as usize };
                options[idx.min(k - 1)]
            }
        })
        .collect()
}

/// Silverman's rule on [0,1] coordinates, floored so degenerate subsets
/// still produce a usable kernel.
fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (1.06 * var.sqrt() * n.powf(-0.2)).max(1e-3)
}

fn kde_log_density(xs: &[f64], at: f64) -> f64 {
    let bw = silverman_bandwidth(xs);
    let inv = 1.0 / bw;
    let mut acc = 0.0;
    for &x in xs {
        let z = (at - x) * inv;
        acc += (-0.5 * z * z).exp();
    }
    let norm = xs.len() as f64 * bw * (2.0 * std::f64::consts::PI).sqrt();
    ((acc / norm) + 1e-300).ln()
}

fn smoothed_log_prob(coords: &[f64], at: f64, k: usize) -> f64 {
    let to_idx = |c: f64| if k == 1 { 0 } else { (c * (k - 1) as f64).round() as usize };
    let target = to_idx(at);
    let count = coords.iter().filter(|&&c| to_idx(c) == target).count();
    (((count + 1) as f64) / ((coords.len() + k) as f64)).ln()
}

// ---------------------------------------------------------------------------
// Sweep driver
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub n_trials: usize,
    pub n_warmup: usize,
    pub seed: u64,
    pub history_path: PathBuf,
}

impl SweepConfig {
    pub fn new(history_path: PathBuf, seed: u64) -> Self {
        Self { n_trials: 40, n_warmup: 8, seed, history_path }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("history io: {0}")]
    Io(#[from] std::io::Error),
    #[error("history line {line}: {message}")]
    ParseHistory { line: usize, message: String },
    #[error("invalid search space: {0:?}")]
    InvalidSpace(Vec<String>),
}

pub struct SweepOutcome {
    pub history: Vec<TrialRecord>,
    pub resumed_trials: usize,
}

impl SweepOutcome {
    /// Highest-objective finished trial; `None` when nothing finished.
    pub fn best(&self) -> Option<&TrialRecord> {
        best_trial(&self.history)
    }
}

pub fn best_trial(history: &[TrialRecord]) -> Option<&TrialRecord> {
    history
        .iter()
        .filter(|t| t.objective.is_some())
        .max_by(|a, b| a.objective.partial_cmp(&b.objective).unwrap_or(std::cmp::Ordering::Equal))
}

pub fn load_history(path: &Path) -> Result<Vec<TrialRecord>, SweepError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(line)
            .map_err(|e| SweepError::ParseHistory { line: i + 1, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

fn persist_history(path: &Path, history: &[TrialRecord]) -> Result<(), SweepError> {
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs trials sequentially until `n_trials` records exist, persisting the
/// history after every trial. A panicking or erroring objective marks its
/// trial failed and the sweep continues. Re-running on an existing history
/// file resumes after the last recorded trial.
pub fn run_sweep<F>(
    space: &SearchSpace,
    cfg: &SweepConfig,
    mut objective: F,
) -> Result<SweepOutcome, SweepError>
where
    F: FnMut(&TrialRecord) -> Result<f64, String>,
{
    let violations = space.validate();
    if !violations.is_empty() {
        return Err(SweepError::InvalidSpace(violations));
    }
    let mut history = load_history(&cfg.history_path)?;
    let resumed = history.len();

    while history.len() < cfg.n_trials {
        let index = history.len();
        let params = sample_trial(&history, space, cfg.seed, cfg.n_warmup);
        let mut record = TrialRecord {
            index,
            params,
            objective: None,
            seed: cfg.seed ^ (index as u64).wrapping_mul(0x9e37_79b9),
            status: TrialStatus::Failed,
            warmup: index < cfg.n_warmup,
        };
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            objective(&record)
        }));
        match outcome {
            Ok(Ok(value)) if value.is_finite() => {
                record.objective = Some(value);
                record.status = TrialStatus::Done;
            }
            _ => {
                record.status = TrialStatus::Failed;
            }
        }
        history.push(record);
        persist_history(&cfg.history_path, &history)?;
    }
    Ok(SweepOutcome { history, resumed_trials: resumed })
}
