//! On-policy PPO trainer.
//!
//! Synchronous collect-then-update loop over a vectorized training batch,
//! with GAE advantages, a clipped surrogate objective, running observation
//! normalization, adaptive-KL learning-rate control, an optional
//! self-supervised forward-dynamics auxiliary loss, and continuous
//! evaluation on a separate environment batch whose RNG streams and
//! normalization statistics training never touches.
//!
//! Everything is bit-reproducible: action noise and minibatch shuffles come
//! from counter-based streams, and minibatch gradients are accumulated in a
//! fixed number of blocks summed in block order, so no result depends on the
//! worker-thread count.

use crate::env::{EnvBatch, EnvBatchConfig, StepResult};
use crate::morphology::MorphologyConfig;
use crate::nn::{
    gaussian_entropy, squashed_log_prob, squashed_log_prob_grads, Activations, HeadGrads,
    NetConfig, PolicyNet,
};
use crate::norm::RunningNorm;
use crate::physics::{Digest, PhysicsConfig};
use crate::rng::{domain, StreamRng};
use crate::tasks::TaskConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Gradient-accumulation blocks per minibatch. Fixed so the summation order
/// (and therefore every rounding) is independent of the worker-thread count.
const GRAD_BLOCKS: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoHyperparams {
    pub learning_rate: f64,
    /// Discount factor.
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Steps collected per environment per update.
    pub rollout_horizon: usize,
    pub n_epochs: usize,
    pub n_minibatches: usize,
    pub max_grad_norm: f64,
    /// Adaptive learning-rate target for the approximate KL; 0 disables.
    pub kl_target: f64,
    /// Weight of the forward-dynamics auxiliary loss; 0 disables the head.
    pub aux_coef: f64,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            rollout_horizon: 32,
            n_epochs: 4,
            n_minibatches: 4,
            max_grad_norm: 1.0,
            kl_target: 0.01,
            aux_coef: 0.0,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self, n_envs: usize) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate > 0.0) {
            v.push("learning_rate must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            v.push("gamma must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            v.push("gae_lambda must lie in [0, 1]".into());
        }
        if !(self.clip_epsilon > 0.0) {
            v.push("clip_epsilon must be positive".into());
        }
        if self.entropy_coef < 0.0 {
            v.push("entropy_coef must be non-negative".into());
        }
        if !(self.value_coef > 0.0) {
            v.push("value_coef must be positive".into());
        }
        if self.rollout_horizon == 0 || self.n_epochs == 0 || self.n_minibatches == 0 {
            v.push("rollout_horizon, n_epochs, n_minibatches must be positive".into());
        } else if (self.rollout_horizon * n_envs) % self.n_minibatches != 0 {
            v.push(format!(
                "minibatch count {} must divide rollout_horizon*n_envs = {}",
                self.n_minibatches,
                self.rollout_horizon * n_envs
            ));
        }
        if !(self.max_grad_norm > 0.0) {
            v.push("max_grad_norm must be positive".into());
        }
        if self.kl_target < 0.0 || self.aux_coef < 0.0 {
            v.push("kl_target and aux_coef must be non-negative".into());
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Generalized advantage estimation
// ---------------------------------------------------------------------------

/// Computes GAE advantages and returns for arrays shaped `(horizon, n_envs)`
/// row-major. `bootstrap[t][e]` must hold the value estimate of the
/// post-step observation wherever one is consumed: at truncation steps and
/// on the final row. Termination zeroes the bootstrap; truncation keeps it.
#[allow(clippy::too_many_arguments)]
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminated: &[bool],
    truncated: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
    advantages: &mut [f64],
    returns: &mut [f64],
    horizon: usize,
    n_envs: usize,
) {
    debug_assert_eq!(rewards.len(), horizon * n_envs);
    for e in 0..n_envs {
        let mut acc = 0.0;
        for t in (0..horizon).rev() {
            let i = t * n_envs + e;
            let done = terminated[i] || truncated[i];
            let v_next = if terminated[i] {
                0.0
            } else if truncated[i] || t == horizon - 1 {
                bootstrap[i]
            } else {
                values[(t + 1) * n_envs + e]
            };
            let delta = rewards[i] + gamma * v_next - values[i];
            acc = delta + gamma * lambda * if done { 0.0 } else { acc };
            advantages[i] = acc;
            returns[i] = acc + values[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Rollout storage
// ---------------------------------------------------------------------------

/// Fixed-horizon on-policy storage, shaped `(horizon, n_envs)` row-major.
/// Observations are stored in normalized space; `u` holds the pre-squash
/// Gaussian samples whose log-probabilities the update re-evaluates.
pub struct RolloutBuffer {
    pub horizon: usize,
    pub n_envs: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub fd_dim: usize,
    pub obs: Vec<f64>,
    pub u: Vec<f64>,
    pub actions: Vec<f64>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    pub bootstrap: Vec<f64>,
    pub fd_target: Vec<f64>,
    pub fd_valid: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(
        horizon: usize,
        n_envs: usize,
        obs_dim: usize,
        n_actions: usize,
        fd_dim: usize,
    ) -> Self {
        let n = horizon * n_envs;
        Self {
            horizon,
            n_envs,
            obs_dim,
            n_actions,
            fd_dim,
            obs: vec![0.0; n * obs_dim],
            u: vec![0.0; n * n_actions],
            actions: vec![0.0; n * n_actions],
            logp: vec![0.0; n],
            values: vec![0.0; n],
            rewards: vec![0.0; n],
            terminated: vec![false; n],
            truncated: vec![false; n],
            bootstrap: vec![0.0; n],
            fd_target: vec![0.0; n * fd_dim],
            fd_valid: vec![false; n],
            advantages: vec![0.0; n],
            returns: vec![0.0; n],
        }
    }

    pub fn n_samples(&self) -> usize {
        self.horizon * self.n_envs
    }

    /// GAE over the stored rows, then advantage normalization (mean 0,
    /// std 1, eps 1e-8) over the whole buffer.
    pub fn finish(&mut self, gamma: f64, lambda: f64) {
        compute_gae(
            &self.rewards,
            &self.values,
            &self.terminated,
            &self.truncated,
            &self.bootstrap,
            gamma,
            lambda,
            &mut self.advantages,
            &mut self.returns,
            self.horizon,
            self.n_envs,
        );
        let n = self.n_samples() as f64;
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var.sqrt() + 1e-8);
        for a in self.advantages.iter_mut() {
            *a = (*a - mean) * inv;
        }
    }
}

// ---------------------------------------------------------------------------
// PPO loss on a set of buffer rows
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct LossCoefs {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub aux_coef: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub aux_loss: f64,
}

impl LossStats {
    fn add(&mut self, o: &LossStats) {
        self.loss += o.loss;
        self.policy_loss += o.policy_loss;
        self.value_loss += o.value_loss;
        self.entropy += o.entropy;
        self.approx_kl += o.approx_kl;
        self.aux_loss += o.aux_loss;
    }

    fn scale(&mut self, s: f64) {
        self.loss *= s;
        self.policy_loss *= s;
        self.value_loss *= s;
        self.entropy *= s;
        self.approx_kl *= s;
        self.aux_loss *= s;
    }
}

/// Total PPO loss over `idx` rows of the buffer (mean reduction). This is
/// the exact objective the gradient path differentiates; kept separate so
/// finite differences can probe it.
pub fn ppo_loss(net: &PolicyNet, buf: &RolloutBuffer, idx: &[usize], coefs: &LossCoefs) -> f64 {
    let mut scratch = net.scratch();
    let mut stats = LossStats::default();
    let sigmas = net.sigmas();
    for &i in idx {
        accumulate_sample(net, buf, i, coefs, &sigmas, &mut scratch, None, &mut stats);
    }
    stats.loss / idx.len() as f64
}

/// Loss, stats and parameter gradient (mean reduction) over `idx` rows.
pub fn ppo_loss_and_grad(
    net: &PolicyNet,
    buf: &RolloutBuffer,
    idx: &[usize],
    coefs: &LossCoefs,
    grad: &mut [f64],
) -> LossStats {
    let mut scratch = net.scratch();
    let mut stats = LossStats::default();
    let sigmas = net.sigmas();
    let inv_n = 1.0 / idx.len() as f64;
    for &i in idx {
        accumulate_sample(
            net,
            buf,
            i,
            coefs,
            &sigmas,
            &mut scratch,
            Some((grad, inv_n)),
            &mut stats,
        );
    }
    stats.scale(inv_n);
    stats
}

/// Adds one sample's loss terms (and optionally gradient) into accumulators.
#[allow(clippy::too_many_arguments)]
fn accumulate_sample(
    net: &PolicyNet,
    buf: &RolloutBuffer,
    i: usize,
    coefs: &LossCoefs,
    sigmas: &[f64],
    scratch: &mut Activations,
    grad: Option<(&mut [f64], f64)>,
    stats: &mut LossStats,
) {
    let obs = &buf.obs[i * buf.obs_dim..(i + 1) * buf.obs_dim];
    let u = &buf.u[i * buf.n_actions..(i + 1) * buf.n_actions];
    let action = &buf.actions[i * buf.n_actions..(i + 1) * buf.n_actions];
    let adv = buf.advantages[i];
    let ret = buf.returns[i];

    net.forward(obs, scratch);
    let logp_new = squashed_log_prob(&scratch.mu, sigmas, u);
    let ratio = (logp_new - buf.logp[i]).exp();
    let clipped = ratio.clamp(1.0 - coefs.clip_epsilon, 1.0 + coefs.clip_epsilon);
    let surr_unclipped = ratio * adv;
    let surr_clipped = clipped * adv;
    let surrogate = surr_unclipped.min(surr_clipped);
    let v_err = scratch.value - ret;
    let entropy = gaussian_entropy(sigmas);
    let aux_active = coefs.aux_coef > 0.0 && buf.fd_dim > 0 && buf.fd_valid[i];
    let mut aux = 0.0;
    if aux_active {
        net.fd_predict(scratch, action);
        let target = &buf.fd_target[i * buf.fd_dim..(i + 1) * buf.fd_dim];
        for (p, t) in scratch.fd_out.iter().zip(target) {
            aux += (p - t) * (p - t);
        }
        aux /= buf.fd_dim as f64;
    }

    stats.policy_loss += -surrogate;
    stats.value_loss += v_err * v_err;
    stats.entropy += entropy;
    stats.aux_loss += aux;
    // Non-negative KL estimator: (ratio - 1) - ln(ratio).
    stats.approx_kl += (ratio - 1.0) - (logp_new - buf.logp[i]);
    stats.loss += -surrogate + coefs.value_coef * v_err * v_err - coefs.entropy_coef * entropy
        + coefs.aux_coef * aux;

    let Some((grad, inv_n)) = grad else { return };

    // d(-surrogate)/d(logp): the clipped branch is flat in the parameters.
    let surr_coeff = if surr_unclipped <= surr_clipped { -surr_unclipped } else { 0.0 };
    let mut d_mu = vec![0.0; buf.n_actions];
    let mut d_ls = vec![0.0; buf.n_actions];
    squashed_log_prob_grads(&scratch.mu, sigmas, u, &mut d_mu, &mut d_ls);
    for k in 0..buf.n_actions {
        d_mu[k] *= surr_coeff * inv_n;
        // Policy term plus the entropy bonus (dH/dlog_std = 1 per dim).
        d_ls[k] = d_ls[k] * surr_coeff * inv_n - coefs.entropy_coef * inv_n;
    }
    let d_value = coefs.value_coef * 2.0 * v_err * inv_n;
    let mut d_fd = Vec::new();
    if aux_active {
        let target = &buf.fd_target[i * buf.fd_dim..(i + 1) * buf.fd_dim];
        d_fd = scratch
            .fd_out
            .iter()
            .zip(target)
            .map(|(p, t)| coefs.aux_coef * 2.0 * (p - t) / buf.fd_dim as f64 * inv_n)
            .collect();
    }
    net.backward(
        scratch,
        HeadGrads {
            d_mu: &d_mu,
            d_value,
            d_log_std: &d_ls,
            d_fd: if aux_active { Some((&d_fd, action)) } else { None },
        },
        grad,
    );
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adaptive moment estimation with the field-default constants
/// (0.9, 0.999, 1e-8).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    fn write_binary(&self, buf: &mut Vec<u8>) {
        write_f64s(buf, &self.m);
        write_f64s(buf, &self.v);
        buf.extend_from_slice(&self.t.to_le_bytes());
    }

    fn read_binary(r: &mut Reader<'_>) -> Result<Adam, TrainerError> {
        let m = r.take_f64s()?;
        let v = r.take_f64s()?;
        let t = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        Ok(Adam { m, v, t })
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub env: EnvBatchConfig,
    pub physics: PhysicsConfig,
    pub task: TaskConfig,
    pub hp: PpoHyperparams,
    /// Encoder layer widths.
    pub hidden: Vec<usize>,
    /// Initial policy log standard deviation.
    pub log_std_init: f64,
    /// Worker threads for env stepping and network batches.
    pub threads: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            env: EnvBatchConfig::default(),
            physics: PhysicsConfig::default(),
            task: TaskConfig::default(),
            hp: PpoHyperparams::default(),
            hidden: vec![256, 256],
            log_std_init: -0.5,
            threads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct IterationStats {
    pub iteration: u64,
    pub env_steps: u64,
    /// Samples consumed by this update: exactly horizon * n_train.
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
    /// Update aborted and parameters restored (non-finite loss).
    pub rolled_back: bool,
    pub wall_clock_s: f64,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_bounces: f64,
    pub mean_switches: f64,
    pub mean_rotations: f64,
    pub mean_length: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error("invalid trainer configuration: {0:?}")]
    Invalid(Vec<String>),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version {got}, expected {want}")]
    Version { got: u32, want: u32 },
}

pub struct Trainer {
    pub cfg: TrainerConfig,
    pub morph: MorphologyConfig,
    pub net: PolicyNet,
    pub adam: Adam,
    pub norm: RunningNorm,
    pub train_envs: EnvBatch,
    pub eval_envs: EnvBatch,
    pub buffer: RolloutBuffer,
    /// Raw (unnormalized) current observations of the train envs.
    current_obs: Vec<f64>,
    pub lr: f64,
    pub iteration: u64,
    pub env_steps: u64,
    /// Offset/width of the newest frame's proprioceptive block in the
    /// stacked observation (forward-dynamics target slice).
    fd_slice: (usize, usize),
    step_scratch: StepResult,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, morph: MorphologyConfig) -> Result<Self, TrainerError> {
        let violations = cfg.hp.validate(cfg.env.n_train);
        if !violations.is_empty() {
            return Err(TrainerError::Invalid(violations));
        }
        if cfg.hidden.is_empty() {
            return Err(TrainerError::Invalid(vec!["hidden must not be empty".into()]));
        }
        let train_envs = EnvBatch::new(
            cfg.env.n_train,
            domain::TRAIN_ENV,
            &cfg.env,
            morph.clone(),
            cfg.task.clone(),
            cfg.physics.clone(),
        )?;
        let eval_envs = EnvBatch::new(
            cfg.env.n_eval.max(1),
            domain::EVAL_ENV,
            &cfg.env,
            morph.clone(),
            cfg.task.clone(),
            cfg.physics.clone(),
        )?;
        let obs_dim = train_envs.obs_width();
        let n_actions = morph.n_actions;
        let widths = morph.obs_block_widths;
        let proprio_w = widths[1] + widths[2] + widths[3] + widths[4];
        let frame_w = train_envs.frame_width();
        let fd_slice = ((cfg.env.stack_k - 1) * frame_w + widths[0], proprio_w);
        let fd_dim = if cfg.hp.aux_coef > 0.0 { proprio_w } else { 0 };

        let net = PolicyNet::new(
            NetConfig {
                obs_dim,
                n_actions,
                hidden: cfg.hidden.clone(),
                fd_dim,
                log_std_init: cfg.log_std_init,
            },
            cfg.env.seed,
        );
        let adam = Adam::new(net.n_params());
        let norm = RunningNorm::new(obs_dim);
        let buffer =
            RolloutBuffer::new(cfg.hp.rollout_horizon, cfg.env.n_train, obs_dim, n_actions, fd_dim);
        let mut trainer = Self {
            lr: cfg.hp.learning_rate,
            cfg,
            morph,
            net,
            adam,
            norm,
            train_envs,
            eval_envs,
            buffer,
            current_obs: Vec::new(),
            iteration: 0,
            env_steps: 0,
            fd_slice,
            step_scratch: StepResult::default(),
        };
        trainer.train_envs.threads = trainer.cfg.threads;
        trainer.eval_envs.threads = trainer.cfg.threads;
        trainer.current_obs = trainer.train_envs.reset_all();
        Ok(trainer)
    }

    /// Collects one rollout and runs the PPO update. Touches exactly
    /// `horizon * n_train` env-steps and leaves the eval batch alone.
    pub fn train_iteration(&mut self) -> IterationStats {
        let t_start = std::time::Instant::now();
        let horizon = self.cfg.hp.rollout_horizon;
        let n_envs = self.cfg.env.n_train;
        let obs_dim = self.net.cfg.obs_dim;
        let n_actions = self.net.cfg.n_actions;

        let mut mu = vec![0.0; n_envs * n_actions];
        let mut values = vec![0.0; n_envs];
        let mut actions = vec![0.0; n_envs * n_actions];
        let mut finished_returns: Vec<f64> = Vec::new();
        let mut value_scratch = self.net.scratch();

        for t in 0..horizon {
            // Normalization statistics advance in fixed env order, then the
            // freshly normalized observation feeds the policy and buffer.
            for e in 0..n_envs {
                let raw = &self.current_obs[e * obs_dim..(e + 1) * obs_dim];
                self.norm.update(raw);
            }
            for e in 0..n_envs {
                let raw = &self.current_obs[e * obs_dim..(e + 1) * obs_dim];
                let dst = &mut self.buffer.obs
                    [(t * n_envs + e) * obs_dim..(t * n_envs + e + 1) * obs_dim];
                self.norm.normalize_into(raw, dst);
            }
            {
                // forward_rows reads &self.net while writing mu/values.
                let (obs_block, net_mu, net_val) = (
                    &self.buffer.obs[t * n_envs * obs_dim..(t + 1) * n_envs * obs_dim],
                    &mut mu,
                    &mut values,
                );
                forward_rows_impl(&self.net, self.cfg.threads, obs_block, n_envs, net_mu, net_val);
            }

            let sigmas = self.net.sigmas();
            let step_key = self.iteration * horizon as u64 + t as u64;
            for e in 0..n_envs {
                let mut rng = StreamRng::from_key(&[
                    self.cfg.env.seed,
                    domain::POLICY_SAMPLE,
                    step_key,
                    e as u64,
                ]);
                let base = e * n_actions;
                let row = t * n_envs + e;
                for k in 0..n_actions {
                    let u = mu[base + k] + sigmas[k] * rng.normal();
                    self.buffer.u[row * n_actions + k] = u;
                    actions[base + k] = u.tanh();
                }
                let u_row = &self.buffer.u[row * n_actions..(row + 1) * n_actions];
                self.buffer.logp[row] =
                    squashed_log_prob(&mu[base..base + n_actions], &sigmas, u_row);
                self.buffer.values[row] = values[e];
            }
            self.buffer.actions[t * n_envs * n_actions..(t + 1) * n_envs * n_actions]
                .copy_from_slice(&actions);

            self.train_envs
                .step_into(&actions, &mut self.step_scratch)
                .expect("action buffer shape is fixed");
            self.env_steps += n_envs as u64;

            for e in 0..n_envs {
                let i = t * n_envs + e;
                self.buffer.rewards[i] = self.step_scratch.rewards[e];
                self.buffer.terminated[i] = self.step_scratch.terminated[e];
                self.buffer.truncated[i] = self.step_scratch.truncated[e];
                self.buffer.bootstrap[i] = 0.0;
                if let Some(fin) = self.step_scratch.info[e].finished {
                    finished_returns.push(fin.ep_return);
                }
                if self.step_scratch.truncated[e] {
                    // Value of the truncated episode's terminal observation,
                    // normalized with the stats as of this step.
                    let final_obs = self.step_scratch.info[e]
                        .final_observation
                        .as_deref()
                        .expect("truncated step carries its final observation");
                    let mut normed = vec![0.0; obs_dim];
                    self.norm.normalize_into(final_obs, &mut normed);
                    self.net.forward(&normed, &mut value_scratch);
                    self.buffer.bootstrap[i] = value_scratch.value;
                }
            }

            // Forward-dynamics targets for the previous row: the newest
            // frame's proprioceptive block of this step's observation.
            if self.buffer.fd_dim > 0 && t > 0 {
                let (off, w) = self.fd_slice;
                let fd_dim = self.buffer.fd_dim;
                let buf = &mut self.buffer;
                for e in 0..n_envs {
                    let prev = (t - 1) * n_envs + e;
                    if buf.terminated[prev] || buf.truncated[prev] {
                        continue;
                    }
                    let cur = t * n_envs + e;
                    let src_start = cur * obs_dim + off;
                    let (obs, fd_target) = (&buf.obs, &mut buf.fd_target);
                    fd_target[prev * fd_dim..(prev + 1) * fd_dim]
                        .copy_from_slice(&obs[src_start..src_start + w]);
                    buf.fd_valid[prev] = true;
                }
            }

            self.current_obs.copy_from_slice(&self.step_scratch.observations);
        }

        // Horizon bootstrap for rows that did not end their episode.
        {
            let mut normed = vec![0.0; n_envs * obs_dim];
            for e in 0..n_envs {
                let raw = &self.current_obs[e * obs_dim..(e + 1) * obs_dim];
                self.norm.normalize_into(raw, &mut normed[e * obs_dim..(e + 1) * obs_dim]);
            }
            forward_rows_impl(&self.net, self.cfg.threads, &normed, n_envs, &mut mu, &mut values);
            let t = horizon - 1;
            for e in 0..n_envs {
                let i = t * n_envs + e;
                if !self.buffer.terminated[i] && !self.buffer.truncated[i] {
                    self.buffer.bootstrap[i] = values[e];
                }
            }
        }
        // Final rows never see their successor frame.
        if self.buffer.fd_dim > 0 {
            let t = horizon - 1;
            for e in 0..n_envs {
                self.buffer.fd_valid[t * n_envs + e] = false;
            }
        }

        self.buffer.finish(self.cfg.hp.gamma, self.cfg.hp.gae_lambda);
        let update = self.update();
        self.iteration += 1;

        IterationStats {
            iteration: self.iteration,
            env_steps: self.env_steps,
            samples: horizon * n_envs,
            episodes_finished: finished_returns.len(),
            mean_train_return: if finished_returns.is_empty() {
                None
            } else {
                Some(finished_returns.iter().sum::<f64>() / finished_returns.len() as f64)
            },
            policy_loss: update.stats.policy_loss,
            value_loss: update.stats.value_loss,
            entropy: update.stats.entropy,
            approx_kl: update.stats.approx_kl,
            aux_loss: update.stats.aux_loss,
            grad_norm: update.grad_norm,
            lr: self.lr,
            rolled_back: update.rolled_back,
            wall_clock_s: t_start.elapsed().as_secs_f64(),
        }
    }

    /// Epoch/minibatch loop over the filled buffer.
    fn update(&mut self) -> UpdateOutcome {
        let hp = self.cfg.hp.clone();
        let n_samples = self.buffer.n_samples();
        let mb_size = n_samples / hp.n_minibatches;
        let coefs = LossCoefs {
            clip_epsilon: hp.clip_epsilon,
            value_coef: hp.value_coef,
            entropy_coef: hp.entropy_coef,
            aux_coef: hp.aux_coef,
        };

        let snapshot_params = self.net.params.clone();
        let snapshot_adam = self.adam.clone();
        let snapshot_lr = self.lr;

        let n_params = self.net.n_params();
        let mut block_grads: Vec<Vec<f64>> =
            (0..GRAD_BLOCKS).map(|_| vec![0.0; n_params]).collect();
        let mut block_stats: Vec<LossStats> = vec![LossStats::default(); GRAD_BLOCKS];
        let mut grad = vec![0.0; n_params];
        let mut indices: Vec<usize> = (0..n_samples).collect();

        let mut last_epoch_kl = 0.0;
        let mut agg = LossStats::default();
        let mut agg_count = 0usize;
        let mut grad_norm_last = 0.0;

        for epoch in 0..hp.n_epochs {
            let mut rng = StreamRng::from_key(&[
                self.cfg.env.seed,
                domain::UPDATE_SHUFFLE,
                self.iteration,
                epoch as u64,
            ]);
            rng.shuffle(&mut indices);
            let mut epoch_kl = 0.0;

            for mb in 0..hp.n_minibatches {
                let mb_idx = &indices[mb * mb_size..(mb + 1) * mb_size];
                let block_len = mb_size.div_ceil(GRAD_BLOCKS);
                for g in block_grads.iter_mut() {
                    g.iter_mut().for_each(|x| *x = 0.0);
                }
                minibatch_blocks(
                    &self.net,
                    &self.buffer,
                    mb_idx,
                    &coefs,
                    block_len,
                    self.cfg.threads,
                    &mut block_grads,
                    &mut block_stats,
                );

                // Deterministic reduction: block order, then clip + step.
                grad.iter_mut().for_each(|x| *x = 0.0);
                for g in &block_grads {
                    for (acc, &v) in grad.iter_mut().zip(g) {
                        *acc += v;
                    }
                }
                let mut mb_stats = LossStats::default();
                for s in &block_stats {
                    mb_stats.add(s);
                }
                mb_stats.scale(1.0 / mb_size as f64);

                let norm2: f64 = grad.iter().map(|g| g * g).sum();
                let grad_norm = norm2.sqrt();
                if !mb_stats.loss.is_finite() || !grad_norm.is_finite() {
                    self.net.params = snapshot_params;
                    self.adam = snapshot_adam;
                    self.lr = snapshot_lr;
                    let mut stats = agg;
                    stats.scale(if agg_count > 0 { 1.0 / agg_count as f64 } else { 1.0 });
                    return UpdateOutcome { stats, grad_norm, rolled_back: true };
                }
                if grad_norm > hp.max_grad_norm {
                    let scale = hp.max_grad_norm / grad_norm;
                    grad.iter_mut().for_each(|g| *g *= scale);
                }
                grad_norm_last = grad_norm;
                self.adam.step(&mut self.net.params, &grad, self.lr);

                epoch_kl += mb_stats.approx_kl;
                agg.add(&mb_stats);
                agg_count += 1;
            }
            last_epoch_kl = epoch_kl / hp.n_minibatches as f64;
        }

        // Adaptive learning rate from the final epoch's mean KL.
        if hp.kl_target > 0.0 {
            if last_epoch_kl > 2.0 * hp.kl_target {
                self.lr = (self.lr * 0.5).max(1e-6);
            } else if last_epoch_kl < 0.5 * hp.kl_target {
                self.lr = (self.lr * 2.0).min(1e-2);
            }
        }

        let mut stats = agg;
        stats.scale(if agg_count > 0 { 1.0 / agg_count as f64 } else { 1.0 });
        UpdateOutcome { stats, grad_norm: grad_norm_last, rolled_back: false }
    }

    /// Deterministic evaluation on the separate eval batch: actions are the
    /// squashed Gaussian means, normalization statistics stay frozen, and
    /// only completed episodes enter the aggregates.
    pub fn evaluate(&mut self, n_episodes: usize) -> EvalReport {
        evaluate_policy(&mut self.eval_envs, &self.net, &self.norm, n_episodes, self.cfg.threads)
    }

    pub fn state_digest(&self) -> u64 {
        let mut d = Digest::new();
        d.write_f64s(&self.net.params);
        d.write_u64(self.norm.digest());
        d.write_u64(self.iteration);
        d.write_u64(self.env_steps);
        d.write_u64(self.lr.to_bits());
        d.finish()
    }
}

struct UpdateOutcome {
    stats: LossStats,
    grad_norm: f64,
    rolled_back: bool,
}

/// Runs one minibatch in `GRAD_BLOCKS` fixed sample blocks, each accumulated
/// sequentially; workers own whole blocks, so partial gradients are
/// identical for every thread count.
#[allow(clippy::too_many_arguments)]
fn minibatch_blocks(
    net: &PolicyNet,
    buf: &RolloutBuffer,
    mb_idx: &[usize],
    coefs: &LossCoefs,
    block_len: usize,
    threads: usize,
    block_grads: &mut [Vec<f64>],
    block_stats: &mut [LossStats],
) {
    let mb_size = mb_idx.len();
    let inv_n = 1.0 / mb_size as f64;
    let run_block = |block: usize, grad_out: &mut [f64]| -> LossStats {
        let lo = block * block_len;
        let hi = ((block + 1) * block_len).min(mb_size);
        let mut stats = LossStats::default();
        if lo >= hi {
            return stats;
        }
        let mut scratch = net.scratch();
        let sigmas = net.sigmas();
        for &i in &mb_idx[lo..hi] {
            accumulate_sample(
                net,
                buf,
                i,
                coefs,
                &sigmas,
                &mut scratch,
                Some((grad_out, inv_n)),
                &mut stats,
            );
        }
        stats
    };

    let threads = threads.max(1);
    if threads <= 1 {
        for (b, g) in block_grads.iter_mut().enumerate() {
            block_stats[b] = run_block(b, g);
        }
        return;
    }
    let per = GRAD_BLOCKS.div_ceil(threads);
    std::thread::scope(|scope| {
        for (w, (grads_chunk, stats_chunk)) in
            block_grads.chunks_mut(per).zip(block_stats.chunks_mut(per)).enumerate()
        {
            let run_block = &run_block;
            scope.spawn(move || {
                for (k, g) in grads_chunk.iter_mut().enumerate() {
                    stats_chunk[k] = run_block(w * per + k, g);
                }
            });
        }
    });
}

fn forward_rows_impl(
    net: &PolicyNet,
    threads: usize,
    obs: &[f64],
    n: usize,
    mu: &mut [f64],
    value: &mut [f64],
) {
    let obs_dim = net.cfg.obs_dim;
    let n_actions = net.cfg.n_actions;
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 {
        let mut scratch = net.scratch();
        for r in 0..n {
            net.forward(&obs[r * obs_dim..(r + 1) * obs_dim], &mut scratch);
            mu[r * n_actions..(r + 1) * n_actions].copy_from_slice(&scratch.mu);
            value[r] = scratch.value;
        }
        return;
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        for ((obs_c, mu_c), val_c) in obs
            .chunks(chunk * obs_dim)
            .zip(mu.chunks_mut(chunk * n_actions))
            .zip(value.chunks_mut(chunk))
        {
            scope.spawn(move || {
                let mut scratch = net.scratch();
                let rows = val_c.len();
                for r in 0..rows {
                    net.forward(&obs_c[r * obs_dim..(r + 1) * obs_dim], &mut scratch);
                    mu_c[r * n_actions..(r + 1) * n_actions].copy_from_slice(&scratch.mu);
                    val_c[r] = scratch.value;
                }
            });
        }
    });
}

/// Runs the policy deterministically on `envs` until `n_episodes` episodes
/// complete; aggregates returns and task counters over completed episodes
/// only. The normalizer is read, never updated.
pub fn evaluate_policy(
    envs: &mut EnvBatch,
    net: &PolicyNet,
    norm: &RunningNorm,
    n_episodes: usize,
    threads: usize,
) -> EvalReport {
    assert!(n_episodes > 0, "n_episodes must be positive");
    let n_envs = envs.n_envs;
    let obs_dim = envs.obs_width();
    let n_actions = envs.n_actions();
    envs.threads = threads;
    let mut obs = envs.reset_all();
    let mut normed = vec![0.0; n_envs * obs_dim];
    let mut actions = vec![0.0; n_envs * n_actions];
    let mut mu = vec![0.0; n_envs * n_actions];
    let mut values = vec![0.0; n_envs];
    let mut result = StepResult::default();

    let mut returns = Vec::with_capacity(n_episodes);
    let mut bounces = 0.0;
    let mut switches = 0.0;
    let mut lengths = 0.0;

    while returns.len() < n_episodes {
        for e in 0..n_envs {
            norm.normalize_into(
                &obs[e * obs_dim..(e + 1) * obs_dim],
                &mut normed[e * obs_dim..(e + 1) * obs_dim],
            );
        }
        forward_rows_impl(net, threads, &normed, n_envs, &mut mu, &mut values);
        for (a, &m) in actions.iter_mut().zip(mu.iter()) {
            *a = m.tanh();
        }
        envs.step_into(&actions, &mut result).expect("action shape fixed");
        for e in 0..n_envs {
            if let Some(fin) = result.info[e].finished {
                if returns.len() < n_episodes {
                    returns.push(fin.ep_return);
                    bounces += fin.bounces as f64;
                    switches += fin.switches as f64;
                    lengths += fin.length as f64;
                }
            }
        }
        obs.copy_from_slice(&result.observations);
    }

    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    EvalReport {
        episodes: returns.len(),
        mean_return: mean,
        std_return: var.sqrt(),
        mean_bounces: bounces / n,
        mean_switches: switches / n,
        mean_rotations: switches / n / 2.0,
        mean_length: lengths / n,
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"TBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Trainer {
    /// Versioned binary snapshot: trainer config + morphology (JSON
    /// sections), network parameters, optimizer moments, normalization
    /// state, learning rate, RNG seed and step counters. Byte-identical
    /// across save/load/save round trips.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainerError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg_json = serde_json::to_vec(&self.cfg).expect("config serializes");
        let morph_json = serde_json::to_vec(&self.morph).expect("morphology serializes");
        write_bytes(&mut buf, &cfg_json);
        write_bytes(&mut buf, &morph_json);
        write_f64s(&mut buf, &self.net.params);
        self.adam.write_binary(&mut buf);
        write_norm_binary(&self.norm, &mut buf);
        buf.extend_from_slice(&self.lr.to_le_bytes());
        buf.extend_from_slice(&self.iteration.to_le_bytes());
        buf.extend_from_slice(&self.env_steps.to_le_bytes());

        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Rebuilds a trainer from a checkpoint. Environments are constructed
    /// fresh (and reset); the learned state resumes exactly.
    pub fn load_checkpoint(path: &Path) -> Result<Trainer, TrainerError> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(TrainerError::Corrupt("bad magic; not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(TrainerError::Version { got: version, want: CHECKPOINT_VERSION });
        }
        let cfg: TrainerConfig = serde_json::from_slice(r.take_bytes()?)
            .map_err(|e| TrainerError::Corrupt(format!("config section: {e}")))?;
        let morph: MorphologyConfig = serde_json::from_slice(r.take_bytes()?)
            .map_err(|e| TrainerError::Corrupt(format!("morphology section: {e}")))?;
        let params = r.take_f64s()?;
        let adam = Adam::read_binary(&mut r)?;
        let norm = read_norm_binary(&mut r)?;
        let lr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let iteration = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let env_steps = u64::from_le_bytes(r.take(8)?.try_into().unwrap());

        let mut trainer = Trainer::new(cfg, morph)?;
        if params.len() != trainer.net.n_params() {
            return Err(TrainerError::Corrupt(format!(
                "parameter count {} does not match architecture {}",
                params.len(),
                trainer.net.n_params()
            )));
        }
        trainer.net.params = params;
        trainer.adam = adam;
        trainer.norm = norm;
        trainer.lr = lr;
        trainer.iteration = iteration;
        trainer.env_steps = env_steps;
        Ok(trainer)
    }
}

fn write_norm_binary(norm: &RunningNorm, buf: &mut Vec<u8>) {
    buf.extend_from_slice(&norm.count.to_le_bytes());
    buf.extend_from_slice(&norm.clip.to_le_bytes());
    write_f64s(buf, &norm.mean);
    write_f64s(buf, &norm.m2);
}

fn read_norm_binary(r: &mut Reader<'_>) -> Result<RunningNorm, TrainerError> {
    let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let clip = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let mean = r.take_f64s()?;
    let m2 = r.take_f64s()?;
    if mean.len() != m2.len() {
        return Err(TrainerError::Corrupt("normalizer section shape mismatch".into()));
    }
    let mut norm = RunningNorm::new(mean.len());
    norm.count = count;
    norm.clip = clip;
    norm.mean = mean;
    norm.m2 = m2;
    Ok(norm)
}

fn write_bytes(buf: &mut Vec<u8>, data: &[u8]) {
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    buf.extend_from_slice(data);
}

fn write_f64s(buf: &mut Vec<u8>, data: &[f64]) {
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for &x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainerError> {
        if self.pos + n > self.bytes.len() {
            return Err(TrainerError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_bytes(&mut self) -> Result<&'a [u8], TrainerError> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize;
        self.take(len)
    }

    fn take_f64s(&mut self) -> Result<Vec<f64>, TrainerError> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize;
        let raw = self.take(len * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
