//! Streaming per-dimension observation normalization (Welford).

use serde::{Deserialize, Serialize};

/// Running mean/variance over observation dimensions, with clipped output.
///
/// Statistics are updated sample-by-sample in a fixed order during rollout
/// collection and frozen during evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: u64,
    pub(crate) mean: Vec<f64>,
    /// Sum of squared deviations from the running mean.
    pub(crate) m2: Vec<f64>,
    /// Output clip bound in standard deviations.
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim], clip: 5.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for (i, &x) in sample.iter().enumerate() {
            let delta = x - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x - self.mean[i]);
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Population variance (zero until two samples arrive).
    pub fn variance(&self, i: usize) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2[i] / self.count as f64
        }
    }

    /// Writes `clip(±clip, (x - mean) / sqrt(var + 1e-8))` into `out`.
    pub fn normalize_into(&self, sample: &[f64], out: &mut [f64]) {
        debug_assert_eq!(sample.len(), self.mean.len());
        debug_assert_eq!(out.len(), self.mean.len());
        if self.count < 2 {
            out.copy_from_slice(sample);
            for v in out.iter_mut() {
                *v = v.clamp(-self.clip, self.clip);
            }
            return;
        }
        let n = self.count as f64;
        for i in 0..sample.len() {
            let var = self.m2[i] / n;
            let z = (sample[i] - self.mean[i]) / (var + 1e-8).sqrt();
            out[i] = z.clamp(-self.clip, self.clip);
        }
    }

    /// Digest of the statistics, for frozen-during-eval checks.
    pub fn digest(&self) -> u64 {
        let mut d = crate::physics::Digest::new();
        d.write_u64(self.count);
        d.write_f64s(&self.mean);
        d.write_f64s(&self.m2);
        d.finish()
    }
}
