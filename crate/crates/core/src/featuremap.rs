//! Feature-map level building blocks: spatial pyramid pooling, DropBlock
//! masks, point-wise attention, PAN aggregation and activations.

use crate::decode::sigmoid;
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Max-pool kernel sizes concatenated by the SPP block.
pub const DEFAULT_SPP_KERNELS: [usize; 4] = [1, 5, 9, 13];

/// Dense `C × H × W` tensor in channel-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{height}x{width} map needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    /// Channels `[start, end)` as a new map.
    pub fn channel_slice(&self, start: usize, end: usize) -> Result<FeatureMap> {
        if start >= end || end > self.channels {
            return Err(Error::invalid(format!(
                "channel range {start}..{end} invalid for {} channels",
                self.channels
            )));
        }
        let n = self.height * self.width;
        FeatureMap::new(
            end - start,
            self.height,
            self.width,
            self.values[start * n..end * n].to_vec(),
        )
    }
}

/// Stride-1 max pooling at every kernel size, concatenated along channels.
///
/// Windows are clipped at the borders, which is max pooling with `−∞`
/// padding of `(k − 1)/2`, so spatial size is preserved.
pub fn spp(f: &FeatureMap, kernels: &[usize]) -> Result<FeatureMap> {
    if kernels.is_empty() {
        return Err(Error::invalid("spp needs at least one kernel"));
    }
    if let Some(k) = kernels.iter().find(|&&k| k == 0 || k % 2 == 0) {
        return Err(Error::invalid(format!("spp kernels must be odd and positive, got {k}")));
    }
    let (h, w) = (f.height, f.width);
    let mut values = Vec::with_capacity(f.values.len() * kernels.len());
    let mut rows = vec![0.0; h * w];
    for &k in kernels {
        let r = k / 2;
        for c in 0..f.channels {
            let plane = f.plane(c);
            // separable: max over the row window, then over the column window
            for y in 0..h {
                for x in 0..w {
                    let lo = x.saturating_sub(r);
                    let hi = (x + r).min(w - 1);
                    rows[y * w + x] = plane[y * w + lo..=y * w + hi]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max);
                }
            }
            for y in 0..h {
                let lo = y.saturating_sub(r);
                let hi = (y + r).min(h - 1);
                for x in 0..w {
                    let m = (lo..=hi)
                        .map(|yy| rows[yy * w + x])
                        .fold(f64::NEG_INFINITY, f64::max);
                    values.push(m);
                }
            }
        }
    }
    FeatureMap::new(f.channels * kernels.len(), h, w, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropBlockMask {
    pub height: usize,
    pub width: usize,
    /// Row-major, `true` where activations are kept.
    pub keep: Vec<bool>,
    /// `total / kept`, used to rescale surviving activations; 0 if nothing survives.
    pub scale: f64,
}

impl DropBlockMask {
    pub fn kept_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| k).count() as f64 / self.keep.len() as f64
    }

    /// Multiplies every channel of `f` by the mask and the rescaling factor.
    pub fn apply(&self, f: &FeatureMap) -> Result<FeatureMap> {
        if f.height != self.height || f.width != self.width {
            return Err(Error::ShapeMismatch(format!(
                "mask is {}x{}, map is {}x{}",
                self.height, self.width, f.height, f.width
            )));
        }
        let n = self.height * self.width;
        let values = f
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.keep[i % n] { v * self.scale } else { 0.0 })
            .collect();
        FeatureMap::new(f.channels, f.height, f.width, values)
    }
}

/// Seed rate that makes the expected dropped fraction about `1 − keep_prob`.
pub fn dropblock_gamma(h: usize, w: usize, block_size: usize, keep_prob: f64) -> f64 {
    let valid = ((h - block_size + 1) * (w - block_size + 1)) as f64;
    (1.0 - keep_prob) / (block_size * block_size) as f64 * (h * w) as f64 / valid
}

/// Samples a DropBlock mask: block seeds are Bernoulli(γ) over every position
/// where a full `block_size²` square fits, and each seed zeroes its square.
pub fn dropblock_mask<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    block_size: usize,
    keep_prob: f64,
    rng: &mut R,
) -> Result<DropBlockMask> {
    if h == 0 || w == 0 || block_size == 0 || block_size > h.min(w) {
        return Err(Error::invalid(format!(
            "block size {block_size} must be in 1..={} for a {h}x{w} map",
            h.min(w)
        )));
    }
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(format!("keep_prob must be in (0, 1], got {keep_prob}")));
    }
    let gamma = dropblock_gamma(h, w, block_size, keep_prob).min(1.0);
    let mut keep = vec![true; h * w];
    if gamma > 0.0 {
        for sy in 0..=(h - block_size) {
            for sx in 0..=(w - block_size) {
                if rng.random::<f64>() < gamma {
                    for y in sy..sy + block_size {
                        keep[y * w + sx..y * w + sx + block_size].fill(false);
                    }
                }
            }
        }
    }
    let kept = keep.iter().filter(|&&k| k).count();
    let scale = if kept == 0 { 0.0 } else { (h * w) as f64 / kept as f64 };
    Ok(DropBlockMask {
        height: h,
        width: w,
        keep,
        scale,
    })
}

/// Point-wise attention: `f ⊙ σ(logits)` element by element.
pub fn pointwise_sam(f: &FeatureMap, attention_logits: &FeatureMap) -> Result<FeatureMap> {
    if f.shape() != attention_logits.shape() {
        return Err(Error::ShapeMismatch(format!(
            "attention shape {:?} differs from feature shape {:?}",
            attention_logits.shape(),
            f.shape()
        )));
    }
    let values = f
        .values
        .iter()
        .zip(&attention_logits.values)
        .map(|(&v, &l)| v * sigmoid(l))
        .collect();
    FeatureMap::new(f.channels, f.height, f.width, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Add,
    Concat,
}

/// Merges two paths of a path-aggregation neck, by addition or by channel
/// concatenation.
pub fn pan_aggregate(a: &FeatureMap, b: &FeatureMap, mode: Aggregate) -> Result<FeatureMap> {
    match mode {
        Aggregate::Add => {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "add needs identical shapes, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
            FeatureMap::new(a.channels, a.height, a.width, values)
        }
        Aggregate::Concat => {
            if (a.height, a.width) != (b.height, b.width) {
                return Err(Error::ShapeMismatch(format!(
                    "concat needs equal spatial size, got {}x{} and {}x{}",
                    a.height, a.width, b.height, b.width
                )));
            }
            let mut values = a.values.clone();
            values.extend_from_slice(&b.values);
            FeatureMap::new(a.channels + b.channels, a.height, a.width, values)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Mish,
    Swish,
    LeakyRelu(f64),
}

/// `ln(1 + eˣ)`, linear above 20.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Activation value and derivative at `x`.
pub fn activation(x: f64, kind: Activation) -> (f64, f64) {
    match kind {
        Activation::Mish => {
            let sp = softplus(x);
            let t = sp.tanh();
            // d/dx softplus = σ(x); d/dx tanh(u) = 1 − tanh²(u)
            (x * t, t + x * (1.0 - t * t) * sigmoid(x))
        }
        Activation::Swish => {
            let s = sigmoid(x);
            (x * s, s + x * s * (1.0 - s))
        }
        Activation::LeakyRelu(alpha) => {
            if x >= 0.0 {
                (x, 1.0)
            } else {
                (alpha * x, alpha)
            }
        }
    }
}
