//! Minimal dense-network machinery for MLP policies.
//!
//! A [`PolicyNet`] is a tanh-MLP encoder with three heads: a per-action
//! Gaussian mean, a scalar value, and an optional forward-dynamics predictor
//! that maps (encoding, action) to the next frame's proprioceptive block.
//! Parameters live in one flat `Vec<f64>`; forward passes record the
//! activations needed for the hand-written reverse pass, which accumulates
//! into a flat gradient buffer of the same length. Keeping autodiff explicit
//! keeps training bit-reproducible.

use crate::rng::{domain, StreamRng};
use serde::{Deserialize, Serialize};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Floor inside the tanh-squash log-prob correction.
const SQUASH_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    /// Encoder layer widths (tanh nonlinearities).
    pub hidden: Vec<usize>,
    /// Output width of the forward-dynamics head; 0 disables the head.
    pub fd_dim: usize,
    /// Initial value of the state-independent log standard deviation.
    pub log_std_init: f64,
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    w_off: usize,
    b_off: usize,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub cfg: NetConfig,
    enc: Vec<Slot>,
    policy: Slot,
    value: Slot,
    fd: Option<Slot>,
    log_std_off: usize,
    pub params: Vec<f64>,
}

/// Per-sample forward-pass record, reused across samples.
#[derive(Clone, Debug, Default)]
pub struct Activations {
    input: Vec<f64>,
    /// Post-tanh activations per encoder layer.
    hidden: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub value: f64,
    pub fd_out: Vec<f64>,
    // Reverse-pass scratch.
    d_hidden: Vec<Vec<f64>>,
}

/// Loss gradients flowing into the heads for one sample.
pub struct HeadGrads<'a> {
    /// dL/d(mu).
    pub d_mu: &'a [f64],
    /// dL/d(value).
    pub d_value: f64,
    /// dL/d(clamped log_std), one per action.
    pub d_log_std: &'a [f64],
    /// dL/d(fd prediction) with the action that fed the head.
    pub d_fd: Option<(&'a [f64], &'a [f64])>,
}

impl PolicyNet {
    pub fn new(cfg: NetConfig, seed: u64) -> Self {
        assert!(!cfg.hidden.is_empty(), "encoder needs at least one layer");
        fn alloc(offset: &mut usize, in_dim: usize, out_dim: usize) -> Slot {
            let slot = Slot { w_off: *offset, b_off: *offset + in_dim * out_dim, in_dim, out_dim };
            *offset += in_dim * out_dim + out_dim;
            slot
        }
        let mut offset = 0usize;
        let mut enc = Vec::new();
        let mut in_dim = cfg.obs_dim;
        for &h in &cfg.hidden {
            enc.push(alloc(&mut offset, in_dim, h));
            in_dim = h;
        }
        let policy = alloc(&mut offset, in_dim, cfg.n_actions);
        let value = alloc(&mut offset, in_dim, 1);
        let log_std_off = offset;
        offset += cfg.n_actions;
        let fd = (cfg.fd_dim > 0).then(|| alloc(&mut offset, in_dim + cfg.n_actions, cfg.fd_dim));

        let mut net = Self { cfg, enc, policy, value, fd, log_std_off, params: vec![0.0; offset] };
        net.init(seed);
        net
    }

    /// Xavier-uniform init; each tensor draws from its own stream so the
    /// presence of the optional fd head never shifts the other tensors.
    fn init(&mut self, seed: u64) {
        let enc_slots: Vec<Slot> = self.enc.clone();
        for (i, slot) in enc_slots.iter().enumerate() {
            self.init_slot(*slot, seed, 10 + i as u64, 1.0);
        }
        let (policy, value, fd) = (self.policy, self.value, self.fd);
        self.init_slot(policy, seed, 1, 0.01); // small policy head for a near-centered start
        self.init_slot(value, seed, 2, 1.0);
        if let Some(fd) = fd {
            self.init_slot(fd, seed, 4, 1.0);
        }
        let ls0 = self.cfg.log_std_init.clamp(LOG_STD_MIN, LOG_STD_MAX);
        for i in 0..self.cfg.n_actions {
            self.params[self.log_std_off + i] = ls0;
        }
    }

    fn init_slot(&mut self, slot: Slot, seed: u64, slot_id: u64, gain: f64) {
        let mut rng = StreamRng::from_key(&[seed, domain::NET_INIT, slot_id]);
        let limit = gain * (6.0 / (slot.in_dim + slot.out_dim) as f64).sqrt();
        for i in 0..slot.in_dim * slot.out_dim {
            self.params[slot.w_off + i] = rng.range_f64(-limit, limit);
        }
        for i in 0..slot.out_dim {
            self.params[slot.b_off + i] = 0.0;
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn encoding_dim(&self) -> usize {
        *self.cfg.hidden.last().unwrap()
    }

    /// Standard deviation for one action dimension plus whether the log-std
    /// parameter is inside the clamp (gradient passes only when it is).
    pub fn sigma(&self, i: usize) -> (f64, bool) {
        let raw = self.params[self.log_std_off + i];
        let clamped = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        (clamped.exp(), raw == clamped)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.cfg.n_actions).map(|i| self.sigma(i).0).collect()
    }

    pub fn scratch(&self) -> Activations {
        Activations {
            input: vec![0.0; self.cfg.obs_dim],
            hidden: self.cfg.hidden.iter().map(|&h| vec![0.0; h]).collect(),
            mu: vec![0.0; self.cfg.n_actions],
            value: 0.0,
            fd_out: vec![0.0; self.cfg.fd_dim],
            d_hidden: self.cfg.hidden.iter().map(|&h| vec![0.0; h]).collect(),
        }
    }

    fn linear(&self, slot: Slot, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), slot.in_dim);
        debug_assert_eq!(out.len(), slot.out_dim);
        for o in 0..slot.out_dim {
            let row =
                &self.params[slot.w_off + o * slot.in_dim..slot.w_off + (o + 1) * slot.in_dim];
            let mut acc = self.params[slot.b_off + o];
            for (i, &xi) in x.iter().enumerate() {
                acc += row[i] * xi;
            }
            out[o] = acc;
        }
    }

    /// Backpropagates `d_out` through the layer: parameter gradients
    /// accumulate into `grad`, input gradients into `d_x` when given.
    fn linear_backward(
        &self,
        slot: Slot,
        x: &[f64],
        d_out: &[f64],
        d_x: Option<&mut [f64]>,
        grad: &mut [f64],
    ) {
        for o in 0..slot.out_dim {
            let g = d_out[o];
            if g == 0.0 {
                continue;
            }
            let w_row = slot.w_off + o * slot.in_dim;
            for (i, &xi) in x.iter().enumerate() {
                grad[w_row + i] += g * xi;
            }
            grad[slot.b_off + o] += g;
        }
        if let Some(d_x) = d_x {
            for (i, dx) in d_x.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (o, &g) in d_out.iter().enumerate() {
                    acc += self.params[slot.w_off + o * slot.in_dim + i] * g;
                }
                *dx += acc;
            }
        }
    }

    /// Runs encoder + policy/value heads; fills `scratch`.
    pub fn forward(&self, obs: &[f64], scratch: &mut Activations) {
        debug_assert_eq!(obs.len(), self.cfg.obs_dim);
        scratch.input.copy_from_slice(obs);
        for (l, slot) in self.enc.iter().enumerate() {
            let (before, rest) = scratch.hidden.split_at_mut(l);
            let out = &mut rest[0];
            let input: &[f64] = if l == 0 { &scratch.input } else { &before[l - 1] };
            self.linear(*slot, input, out);
            for v in out.iter_mut() {
                *v = v.tanh();
            }
        }
        let enc = scratch.hidden.last().unwrap();
        let mut value_out = [0.0];
        self.linear(self.policy, enc, &mut scratch.mu);
        self.linear(self.value, enc, &mut value_out);
        scratch.value = value_out[0];
    }

    /// Forward-dynamics prediction from the recorded encoding and an action.
    /// No-op when the head is disabled.
    pub fn fd_predict(&self, scratch: &mut Activations, action: &[f64]) {
        let Some(fd) = self.fd else { return };
        let enc = scratch.hidden.last().unwrap();
        let joined: Vec<f64> = enc.iter().copied().chain(action.iter().copied()).collect();
        self.linear(fd, &joined, &mut scratch.fd_out);
    }

    /// Reverse pass for one sample. `scratch` must hold the forward results;
    /// gradients accumulate into `grad` (same length as `params`).
    pub fn backward(&self, scratch: &mut Activations, heads: HeadGrads<'_>, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        for d in scratch.d_hidden.iter_mut() {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
        let last = self.enc.len() - 1;

        // Heads into d_hidden[last].
        {
            let enc = &scratch.hidden[last];
            let d_enc = &mut scratch.d_hidden[last];
            self.linear_backward(self.policy, enc, heads.d_mu, Some(d_enc), grad);
            let d_value = [heads.d_value];
            self.linear_backward(self.value, enc, &d_value, Some(d_enc), grad);
            if let (Some(fd), Some((d_fd, action))) = (self.fd, heads.d_fd) {
                let joined: Vec<f64> = enc.iter().copied().chain(action.iter().copied()).collect();
                let mut d_joined = vec![0.0; joined.len()];
                self.linear_backward(fd, &joined, d_fd, Some(&mut d_joined), grad);
                for (i, d) in d_enc.iter_mut().enumerate() {
                    *d += d_joined[i];
                }
            }
        }
        for (i, &g) in heads.d_log_std.iter().enumerate() {
            let (_, active) = self.sigma(i);
            if active {
                grad[self.log_std_off + i] += g;
            }
        }

        // Encoder layers, newest first. tanh'(x) = 1 - tanh(x)^2.
        for l in (0..=last).rev() {
            let (h_before, h_rest) = scratch.hidden.split_at(l);
            let h = &h_rest[0];
            let (d_before, d_rest) = scratch.d_hidden.split_at_mut(l);
            let d_out = &mut d_rest[0];
            for (d, &hv) in d_out.iter_mut().zip(h.iter()) {
                *d *= 1.0 - hv * hv;
            }
            if l == 0 {
                self.linear_backward(self.enc[l], &scratch.input, d_out, None, grad);
            } else {
                let input = &h_before[l - 1];
                let d_in = &mut d_before[l - 1];
                self.linear_backward(self.enc[l], input, d_out, Some(d_in), grad);
            }
        }
    }
}

/// Log-density of a squashed-Gaussian action evaluated at the pre-squash
/// sample `u`: the Gaussian term minus the tanh change-of-variables
/// correction. The correction depends only on `u`, so it cancels from policy
/// ratios but keeps log-probs comparable across policies.
pub fn squashed_log_prob(mu: &[f64], sigmas: &[f64], u: &[f64]) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    let mut logp = 0.0;
    for i in 0..mu.len() {
        let z = (u[i] - mu[i]) / sigmas[i];
        logp += -0.5 * z * z - sigmas[i].ln() - HALF_LN_2PI;
        let t = u[i].tanh();
        logp -= (1.0 - t * t + SQUASH_EPS).ln();
    }
    logp
}

/// d(log_prob)/d(mu_i) and d(log_prob)/d(clamped log_std_i) at fixed `u`.
pub fn squashed_log_prob_grads(
    mu: &[f64],
    sigmas: &[f64],
    u: &[f64],
    d_mu: &mut [f64],
    d_log_std: &mut [f64],
) {
    for i in 0..mu.len() {
        let z = (u[i] - mu[i]) / sigmas[i];
        d_mu[i] = z / sigmas[i];
        d_log_std[i] = z * z - 1.0;
    }
}

/// Entropy of the pre-squash Gaussian (the usual PPO exploration bonus).
pub fn gaussian_entropy(sigmas: &[f64]) -> f64 {
    const HALF_1_LN_2PI: f64 = 1.418_938_533_204_672_7; // 0.5 * (1 + ln 2pi)
    sigmas.iter().map(|s| s.ln() + HALF_1_LN_2PI).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net(fd: bool) -> PolicyNet {
        PolicyNet::new(
            NetConfig {
                obs_dim: 3,
                n_actions: 2,
                hidden: vec![4],
                fd_dim: if fd { 3 } else { 0 },
                log_std_init: -0.5,
            },
            9,
        )
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let net = tiny_net(true);
        let mut s1 = net.scratch();
        let mut s2 = net.scratch();
        let obs = [0.3, -0.2, 0.9];
        net.forward(&obs, &mut s1);
        net.forward(&obs, &mut s2);
        assert_eq!(s1.mu, s2.mu);
        assert_eq!(s1.value, s2.value);
        assert!(s1.mu.iter().all(|m| m.is_finite()));
    }

    #[test]
    fn fd_head_presence_does_not_shift_other_tensors() {
        let with = tiny_net(true);
        let without = tiny_net(false);
        let mut sw = with.scratch();
        let mut so = without.scratch();
        let obs = [0.1, 0.5, -0.7];
        with.forward(&obs, &mut sw);
        without.forward(&obs, &mut so);
        assert_eq!(sw.mu, so.mu);
        assert_eq!(sw.value, so.value);
    }

    /// Full-network gradient check against central finite differences, for
    /// a scalar loss exercising every head.
    #[test]
    fn backward_matches_finite_differences() {
        let mut net = tiny_net(true);
        let obs = [0.4, -0.9, 0.2];
        let action = [0.3, -0.1];
        let target = [0.5, 0.1, -0.2];

        // Loss: sum(mu * cmu) + 2*value + 0.5*sum((fd - target)^2) + sum(ln sigma).
        let cmu = [0.7, -1.3];
        let loss = |net: &PolicyNet| -> f64 {
            let mut s = net.scratch();
            net.forward(&obs, &mut s);
            net.fd_predict(&mut s, &action);
            let mut l = 2.0 * s.value;
            for i in 0..2 {
                l += s.mu[i] * cmu[i];
                let (sig, _) = net.sigma(i);
                l += sig.ln();
            }
            for i in 0..3 {
                l += 0.5 * (s.fd_out[i] - target[i]) * (s.fd_out[i] - target[i]);
            }
            l
        };

        let mut s = net.scratch();
        net.forward(&obs, &mut s);
        net.fd_predict(&mut s, &action);
        let mut d_fd = vec![0.0; 3];
        for i in 0..3 {
            d_fd[i] = s.fd_out[i] - target[i];
        }
        let d_log_std = vec![1.0; 2];
        let mut grad = vec![0.0; net.n_params()];
        net.backward(
            &mut s,
            HeadGrads {
                d_mu: &cmu,
                d_value: 2.0,
                d_log_std: &d_log_std,
                d_fd: Some((&d_fd, &action)),
            },
            &mut grad,
        );

        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for p in 0..net.n_params() {
            let orig = net.params[p];
            net.params[p] = orig + h;
            let lp = loss(&net);
            net.params[p] = orig - h;
            let lm = loss(&net);
            net.params[p] = orig;
            let fd_grad = (lp - lm) / (2.0 * h);
            let denom = grad[p].abs().max(fd_grad.abs()).max(1e-6);
            max_rel = max_rel.max((grad[p] - fd_grad).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn squashed_log_prob_matches_numeric_normal_density() {
        let mu = [0.2, -0.4];
        let sigmas = [0.5, 1.2];
        let u = [0.7, -0.3];
        let logp = squashed_log_prob(&mu, &sigmas, &u);
        // Independent evaluation of the same density.
        let mut expect = 0.0;
        for i in 0..2 {
            let var = sigmas[i] * sigmas[i];
            let gauss = (-((u[i] - mu[i]) * (u[i] - mu[i])) / (2.0 * var)).exp()
                / (var * 2.0 * std::f64::consts::PI).sqrt();
            expect += gauss.ln();
            let t = u[i].tanh();
            expect -= (1.0 - t * t + 1e-6).ln();
        }
        assert!((logp - expect).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_strictly_increasing_in_log_std() {
        let mut last = f64::NEG_INFINITY;
        for k in -40..=20 {
            let ls = k as f64 / 10.0;
            let h = gaussian_entropy(&[ls.exp()]);
            assert!(h > last, "entropy not increasing at log_std {ls}");
            last = h;
        }
    }

    #[test]
    fn log_std_clamp_blocks_gradient_outside_bounds() {
        let mut net = tiny_net(false);
        let ls_off = net.log_std_off;
        net.params[ls_off] = -7.0; // below the clamp
        let (sig, active) = net.sigma(0);
        assert!((sig - (-5.0f64).exp()).abs() < 1e-15);
        assert!(!active);
        let mut s = net.scratch();
        net.forward(&[0.0, 0.0, 0.0], &mut s);
        let mut grad = vec![0.0; net.n_params()];
        net.backward(
            &mut s,
            HeadGrads { d_mu: &[0.0, 0.0], d_value: 0.0, d_log_std: &[1.0, 1.0], d_fd: None },
            &mut grad,
        );
        assert_eq!(grad[ls_off], 0.0, "clamped log_std must not receive gradient");
        assert_eq!(grad[ls_off + 1], 1.0);
    }
}
