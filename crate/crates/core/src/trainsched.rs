//! Learning-rate schedules, resolution-dependent mini-batch sizing and
//! cross-mini-batch normalization statistics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0005;
pub const DEFAULT_TOTAL_STEPS: u64 = 500_500;
pub const DEFAULT_MILESTONES: [u64; 2] = [400_000, 450_000];
pub const DEFAULT_DECAY_FACTOR: f64 = 0.1;

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π t / T))`.
pub fn cosine_lr(t: u64, total: u64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine schedule needs at least one step"));
    }
    if t > total {
        return Err(Error::invalid(format!("step {t} beyond schedule length {total}")));
    }
    // convex weights make both endpoints exact
    let c = 0.5 * (1.0 + (PI * t as f64 / total as f64).cos());
    Ok(c * lr_max + (1.0 - c) * lr_min)
}

/// `lr0 · factor^n` where `n` counts milestones at or before `t`.
pub fn step_decay_lr(t: u64, milestones: &[u64], lr0: f64, factor: f64) -> f64 {
    let n = milestones.iter().filter(|&&m| m <= t).count();
    lr0 * factor.powi(n as i32)
}

/// Mini-batch size for a smaller training resolution, assuming activation
/// memory grows with the square of the resolution.
///
/// The result is `floor(base_mb · (base_res / current_res)²)`, never below
/// `base_mb` and, when given, never above `max_mb`.
pub fn dynamic_minibatch(
    base_mb: u32,
    base_res: u32,
    current_res: u32,
    max_mb: Option<u32>,
) -> Result<u32> {
    for (name, r) in [("base", base_res), ("current", current_res)] {
        if r == 0 || r % 32 != 0 {
            return Err(Error::invalid(format!(
                "{name} resolution must be a positive multiple of 32, got {r}"
            )));
        }
    }
    if base_mb == 0 {
        return Err(Error::invalid("base mini-batch must be positive"));
    }
    // exact integer arithmetic: floor(mb · b² / c²)
    let scaled = (base_mb as u64 * base_res as u64 * base_res as u64)
        / (current_res as u64 * current_res as u64);
    let mut mb = scaled.max(base_mb as u64);
    if let Some(cap) = max_mb {
        mb = mb.min(cap.max(base_mb) as u64);
    }
    Ok(mb.min(u32::MAX as u64) as u32)
}

/// Per-channel normalization statistics (population variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub count: u64,
}

/// Accumulates normalization statistics over the mini-batches of one batch
/// and resets at every batch boundary.
///
/// Raw moments are kept relative to a per-channel shift (the first value
/// seen in the batch), which keeps `Σx²/n − mean²` well conditioned.
#[derive(Debug, Clone)]
pub struct CmBnAccumulator {
    minibatches_per_batch: usize,
    channels: usize,
    position: usize,
    count: u64,
    shift: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl CmBnAccumulator {
    pub fn new(channels: usize, minibatches_per_batch: usize) -> Result<Self> {
        if channels == 0 || minibatches_per_batch == 0 {
            return Err(Error::invalid(
                "channels and mini-batches per batch must be positive",
            ));
        }
        Ok(Self {
            minibatches_per_batch,
            channels,
            position: 0,
            count: 0,
            shift: vec![0.0; channels],
            sum: vec![0.0; channels],
            sum_sq: vec![0.0; channels],
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Mini-batches already folded into the current batch.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn minibatches_per_batch(&self) -> usize {
        self.minibatches_per_batch
    }

    fn reset(&mut self) {
        self.position = 0;
        self.count = 0;
        self.sum.fill(0.0);
        self.sum_sq.fill(0.0);
    }

    /// Folds in one mini-batch (`samples[c]` holds every value of channel `c`)
    /// and returns the statistics of all mini-batches seen so far in the
    /// current batch.
    pub fn update<S: AsRef<[f64]>>(&mut self, samples: &[S]) -> Result<BatchStats> {
        if samples.len() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} channels, got {}",
                self.channels,
                samples.len()
            )));
        }
        let n = samples[0].as_ref().len();
        if n == 0 {
            return Err(Error::invalid("mini-batch is empty"));
        }
        if samples.iter().any(|s| s.as_ref().len() != n) {
            return Err(Error::ShapeMismatch("channels carry different sample counts".into()));
        }
        if samples.iter().any(|s| s.as_ref().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("mini-batch"));
        }
        if self.position == 0 {
            for (shift, s) in self.shift.iter_mut().zip(samples) {
                *shift = s.as_ref()[0];
            }
        }
        for c in 0..self.channels {
            let k = self.shift[c];
            for &x in samples[c].as_ref() {
                let d = x - k;
                self.sum[c] += d;
                self.sum_sq[c] += d * d;
            }
        }
        self.count += n as u64;
        self.position += 1;

        let cnt = self.count as f64;
        let mut mean = Vec::with_capacity(self.channels);
        let mut variance = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let m = self.sum[c] / cnt;
            mean.push(self.shift[c] + m);
            variance.push((self.sum_sq[c] / cnt - m * m).max(0.0));
        }
        let stats = BatchStats {
            mean,
            variance,
            count: self.count,
        };
        if self.position == self.minibatches_per_batch {
            self.reset();
        }
        Ok(stats)
    }
}
