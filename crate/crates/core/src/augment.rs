//! Detection-aware data augmentation.
//!
//! Every operation takes its randomness from an explicit `rng` argument, so
//! a seeded generator reproduces outputs bit for bit. Pixel intensities stay
//! in `[0, 1]` and surviving label boxes stay inside the image.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Clipped boxes keeping less than this fraction of their area are dropped.
pub const DEFAULT_MIN_AREA_FRAC: f64 = 0.1;

/// RGB image, row-major, channels interleaved, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * Self::CHANNELS,
                data.len()
            )));
        }
        let data = data.into_iter().map(clamp01).collect();
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bounds(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = clamp01(rgb[c]);
        }
    }

    fn same_dims(&self, other: &ImageTensor) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "images differ in size: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

#[inline]
fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub bbox: BBox,
    pub class_id: u32,
    /// Mixing weight in `(0, 1]`; 1 for unmixed labels.
    pub weight: f64,
}

impl Label {
    pub fn new(bbox: BBox, class_id: u32) -> Self {
        Self {
            bbox,
            class_id,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub labels: Vec<Label>,
}

impl Sample {
    pub fn new(image: ImageTensor, labels: Vec<Label>) -> Result<Self> {
        let bounds = image.bounds();
        if let Some(l) = labels.iter().find(|l| !l.bbox.is_valid() || !bounds.contains(&l.bbox)) {
            return Err(Error::invalid(format!(
                "label box {:?} is not inside the {}x{} image",
                l.bbox,
                image.width(),
                image.height()
            )));
        }
        if let Some(l) = labels.iter().find(|l| !(l.weight > 0.0 && l.weight <= 1.0)) {
            return Err(Error::invalid(format!("label weight {} outside (0, 1]", l.weight)));
        }
        Ok(Self { image, labels })
    }

    pub fn total_weight(&self) -> f64 {
        self.labels.iter().map(|l| l.weight).sum()
    }
}

/// Transforms a box, clips it to `region`, and keeps it only when the clipped
/// part retains at least `min_area_frac` of the transformed area.
fn clip_label(label: &Label, transformed: BBox, region: &BBox, min_area_frac: f64) -> Option<Label> {
    let full = transformed.area();
    let clipped = transformed.clip(region);
    let kept = clipped.area();
    if kept <= 0.0 || kept < min_area_frac * full {
        return None;
    }
    Some(Label {
        bbox: clipped,
        ..*label
    })
}

/// How a source image is fitted into its mosaic quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MosaicScaling {
    /// Independent x/y scale factors so the source exactly fills the quadrant.
    #[default]
    Stretch,
    /// One scale factor, large enough to cover the quadrant; the overflow is
    /// cropped away together with the labels it contains.
    Cover,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosaicConfig {
    /// The split point is drawn uniformly from `[lo, hi]` times the canvas size.
    pub split_range: (f64, f64),
    pub min_area_frac: f64,
    pub scaling: MosaicScaling,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            split_range: (0.25, 0.75),
            min_area_frac: DEFAULT_MIN_AREA_FRAC,
            scaling: MosaicScaling::Stretch,
        }
    }
}

/// Composites four samples around a random split point.
///
/// Quadrants are filled in the order top-left, top-right, bottom-left,
/// bottom-right. See [`mosaic_at`] for the placement rule.
pub fn mosaic<R: Rng + ?Sized>(
    samples: &[Sample],
    out_w: usize,
    out_h: usize,
    cfg: &MosaicConfig,
    rng: &mut R,
) -> Result<Sample> {
    check_mosaic_args(samples, out_w, out_h)?;
    let (lo, hi) = cfg.split_range;
    if !(0.0 < lo && lo <= hi && hi < 1.0) {
        return Err(Error::invalid(format!("split range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")));
    }
    let fx: f64 = rng.random_range(lo..=hi);
    let fy: f64 = rng.random_range(lo..=hi);
    let px = ((fx * out_w as f64).round() as usize).clamp(1, out_w - 1);
    let py = ((fy * out_h as f64).round() as usize).clamp(1, out_h - 1);
    mosaic_at(samples, out_w, out_h, (px, py), cfg)
}

fn check_mosaic_args(samples: &[Sample], out_w: usize, out_h: usize) -> Result<()> {
    if samples.len() != 4 {
        return Err(Error::invalid(format!("mosaic needs exactly 4 samples, got {}", samples.len())));
    }
    if out_w < 2 || out_h < 2 {
        return Err(Error::invalid(format!("mosaic canvas must be at least 2x2, got {out_w}x{out_h}")));
    }
    Ok(())
}

/// Placement of one source image inside a mosaic quadrant: canvas
/// coordinates are `source · scale + offset` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrantPlacement {
    pub region: BBox,
    pub scale: (f64, f64),
    pub offset: (f64, f64),
}

/// Quadrant regions are top-left, top-right, bottom-left, bottom-right of the
/// split point. Under [`MosaicScaling::Cover`] the corner of the scaled image
/// nearest the split point is pinned to it.
pub fn quadrant_placements(
    sizes: [(usize, usize); 4],
    out_w: usize,
    out_h: usize,
    split: (usize, usize),
    scaling: MosaicScaling,
) -> [QuadrantPlacement; 4] {
    let (px, py) = (split.0 as f64, split.1 as f64);
    let (w, h) = (out_w as f64, out_h as f64);
    let regions = [
        BBox::new(0.0, 0.0, px, py),
        BBox::new(px, 0.0, w, py),
        BBox::new(0.0, py, px, h),
        BBox::new(px, py, w, h),
    ];
    std::array::from_fn(|q| {
        let region = regions[q];
        let (iw, ih) = (sizes[q].0 as f64, sizes[q].1 as f64);
        let (sx, sy) = match scaling {
            MosaicScaling::Stretch => (region.width() / iw, region.height() / ih),
            MosaicScaling::Cover => {
                let k = (region.width() / iw).max(region.height() / ih);
                (k, k)
            }
        };
        let (sw, sh) = (iw * sx, ih * sy);
        let ox = if q % 2 == 0 { px - sw } else { px };
        let oy = if q < 2 { py - sh } else { py };
        QuadrantPlacement {
            region,
            scale: (sx, sy),
            offset: (ox, oy),
        }
    })
}

/// Mosaic with an explicit split point `(px, py)` in canvas pixels.
pub fn mosaic_at(
    samples: &[Sample],
    out_w: usize,
    out_h: usize,
    split: (usize, usize),
    cfg: &MosaicConfig,
) -> Result<Sample> {
    check_mosaic_args(samples, out_w, out_h)?;
    if split.0 == 0 || split.0 >= out_w || split.1 == 0 || split.1 >= out_h {
        return Err(Error::invalid(format!(
            "split point {split:?} must lie strictly inside the {out_w}x{out_h} canvas"
        )));
    }
    let sizes: [(usize, usize); 4] =
        std::array::from_fn(|q| (samples[q].image.width(), samples[q].image.height()));
    let placements = quadrant_placements(sizes, out_w, out_h, split, cfg.scaling);

    let mut canvas = ImageTensor::filled(out_w, out_h, [0.0; 3])?;
    let mut labels = Vec::new();
    for (sample, place) in samples.iter().zip(placements.iter()) {
        let src = &sample.image;
        let r = place.region;
        for y in r.y_min as usize..r.y_max as usize {
            let sy = source_index(y, place.offset.1, place.scale.1, src.height());
            for x in r.x_min as usize..r.x_max as usize {
                let sx = source_index(x, place.offset.0, place.scale.0, src.width());
                canvas.set_pixel(x, y, src.pixel(sx, sy));
            }
        }
        for label in &sample.labels {
            let moved = label
                .bbox
                .scale_xy(place.scale.0, place.scale.1)
                .translate(place.offset.0, place.offset.1);
            if let Some(l) = clip_label(label, moved, &r, cfg.min_area_frac) {
                labels.push(l);
            }
        }
    }
    Ok(Sample {
        image: canvas,
        labels,
    })
}

/// Nearest-neighbour source index for destination pixel `dst` (sampled at
/// its center).
#[inline]
fn source_index(dst: usize, offset: f64, scale: f64, len: usize) -> usize {
    let s = ((dst as f64 + 0.5 - offset) / scale).floor();
    (s.max(0.0) as usize).min(len - 1)
}

/// Nearest-neighbour resize to `out_w × out_h` with independent x/y scale
/// factors. Boxes are scaled exactly, so none are lost.
pub fn resize(s: &Sample, out_w: usize, out_h: usize) -> Result<Sample> {
    let src = &s.image;
    if src.width() == out_w && src.height() == out_h {
        return Ok(s.clone());
    }
    let sx = out_w as f64 / src.width() as f64;
    let sy = out_h as f64 / src.height() as f64;
    let mut image = ImageTensor::filled(out_w, out_h, [0.0; 3])?;
    for y in 0..out_h {
        let yy = source_index(y, 0.0, sy, src.height());
        for x in 0..out_w {
            image.set_pixel(x, y, src.pixel(source_index(x, 0.0, sx, src.width()), yy));
        }
    }
    let bounds = image.bounds();
    let labels = s
        .labels
        .iter()
        .map(|l| Label {
            // guard against the last ulp pushing a border box outside
            bbox: l.bbox.scale_xy(sx, sy).clip(&bounds),
            ..*l
        })
        .collect();
    Ok(Sample { image, labels })
}

/// Integer pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Pastes a random rectangle of `b` into `a`.
///
/// The rectangle has side lengths `√(1 − λ)` times the image sides with
/// `λ ~ U(0, 1)` and a uniformly drawn center, clipped to the image.
pub fn cutmix<R: Rng + ?Sized>(a: &Sample, b: &Sample, rng: &mut R) -> Result<Sample> {
    a.image.same_dims(&b.image)?;
    let (w, h) = (a.image.width(), a.image.height());
    let lambda: f64 = rng.random_range(0.0..1.0);
    let side = (1.0 - lambda).sqrt();
    let rw = (w as f64 * side).floor();
    let rh = (h as f64 * side).floor();
    let cx: f64 = rng.random_range(0.0..w as f64);
    let cy: f64 = rng.random_range(0.0..h as f64);
    let clampi = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n);
    let rect = PixelRect {
        x0: clampi(cx - rw / 2.0, w),
        y0: clampi(cy - rh / 2.0, h),
        x1: clampi(cx + rw / 2.0, w),
        y1: clampi(cy + rh / 2.0, h),
    };
    cutmix_region(a, b, rect)
}

/// CutMix with an explicit pasted region. Label weights become
/// `λ = 1 − |R|/|image|` for `a` and `1 − λ` for `b`.
pub fn cutmix_region(a: &Sample, b: &Sample, rect: PixelRect) -> Result<Sample> {
    a.image.same_dims(&b.image)?;
    let (w, h) = (a.image.width(), a.image.height());
    if rect.x0 > rect.x1 || rect.y0 > rect.y1 || rect.x1 > w || rect.y1 > h {
        return Err(Error::invalid(format!("cutmix region {rect:?} outside {w}x{h} image")));
    }
    let mut image = a.image.clone();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            image.set_pixel(x, y, b.image.pixel(x, y));
        }
    }
    let lambda = 1.0 - rect.area() as f64 / (w * h) as f64;
    Ok(Sample {
        image,
        labels: mix_labels(a, b, lambda),
    })
}

fn mix_labels(a: &Sample, b: &Sample, lambda: f64) -> Vec<Label> {
    let weigh = |labels: &[Label], f: f64| -> Vec<Label> {
        labels
            .iter()
            .map(|l| Label {
                weight: l.weight * f,
                ..*l
            })
            .filter(|l| l.weight > 0.0)
            .collect()
    };
    let mut out = weigh(&a.labels, lambda);
    out.extend(weigh(&b.labels, 1.0 - lambda));
    out
}

/// Pixel-wise blend `λ·a + (1 − λ)·b` with labels from both weighted accordingly.
pub fn mixup(a: &Sample, b: &Sample, lambda: f64) -> Result<Sample> {
    a.image.same_dims(&b.image)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("mixup lambda must be in [0, 1], got {lambda}")));
    }
    let la = lambda as f32;
    let lb = (1.0 - lambda) as f32;
    let data = a
        .image
        .data
        .iter()
        .zip(&b.image.data)
        .map(|(&x, &y)| clamp01(la * x + lb * y))
        .collect();
    Ok(Sample {
        image: ImageTensor {
            data,
            ..a.image.clone()
        },
        labels: mix_labels(a, b, lambda),
    })
}

/// Colour jitter parameters. The default value of every field is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotometricParams {
    /// Added to every channel.
    pub brightness: f64,
    /// Multiplier about the per-image mean intensity.
    pub contrast: f64,
    /// Hue rotation in turns (1.0 is a full rotation).
    pub hue: f64,
    /// Saturation multiplier.
    pub saturation: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self {
            brightness: 0.0,
            contrast: 1.0,
            hue: 0.0,
            saturation: 1.0,
            noise_sigma: 0.0,
        }
    }
}

impl PhotometricParams {
    /// Draws jitter uniformly from `±brightness`, `[1/contrast, contrast]`,
    /// `±hue`, `[1/saturation, saturation]`; noise sigma is passed through.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        brightness: f64,
        contrast: f64,
        hue: f64,
        saturation: f64,
        noise_sigma: f64,
    ) -> Self {
        let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let ratio = |rng: &mut R, r: f64| {
            if r > 1.0 {
                rng.random_range(r.recip()..=r)
            } else {
                1.0
            }
        };
        Self {
            brightness: sym(rng, brightness),
            contrast: ratio(rng, contrast),
            hue: sym(rng, hue),
            saturation: ratio(rng, saturation),
            noise_sigma,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.brightness.is_finite()
            && self.contrast.is_finite()
            && self.contrast >= 0.0
            && self.hue.is_finite()
            && self.saturation.is_finite()
            && self.saturation >= 0.0
            && self.noise_sigma.is_finite()
            && self.noise_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("photometric parameters out of range: {self:?}")))
        }
    }
}

/// Colour jitter: HSV hue rotation and saturation scaling, contrast about the
/// image mean, additive brightness, then additive Gaussian noise. Labels are
/// untouched. Steps at their identity value are skipped.
pub fn photometric<R: Rng + ?Sized>(s: &Sample, p: &PhotometricParams, rng: &mut R) -> Result<Sample> {
    p.validate()?;
    let mut data: Vec<f64> = s.image.data.iter().map(|&v| v as f64).collect();

    if p.hue != 0.0 || p.saturation != 1.0 {
        for px in data.chunks_exact_mut(3) {
            let (h, sat, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let h = (h + p.hue).rem_euclid(1.0);
            let sat = (sat * p.saturation).clamp(0.0, 1.0);
            let (r, g, b) = hsv_to_rgb(h, sat, v);
            px.copy_from_slice(&[r, g, b]);
        }
    }
    if p.contrast != 1.0 {
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        for v in data.iter_mut() {
            *v = mean + p.contrast * (*v - mean);
        }
    }
    if p.brightness != 0.0 {
        for v in data.iter_mut() {
            *v += p.brightness;
        }
    }
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in data.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    let image = ImageTensor {
        data: data.into_iter().map(|v| clamp01(v as f32)).collect(),
        ..s.image.clone()
    };
    Ok(Sample {
        image,
        labels: s.labels.clone(),
    })
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeometricOp {
    HFlip,
    /// Resize both axes by `k`.
    Scale(f64),
    /// Keep only `region`, which must lie inside the image.
    Crop(BBox),
}

/// Applies a geometric transform to pixels and boxes together.
pub fn geometric(s: &Sample, op: GeometricOp, min_area_frac: f64) -> Result<Sample> {
    let src = &s.image;
    let (w, h) = (src.width(), src.height());
    match op {
        GeometricOp::HFlip => {
            let mut image = src.clone();
            for y in 0..h {
                for x in 0..w {
                    image.set_pixel(x, y, src.pixel(w - 1 - x, y));
                }
            }
            let wf = w as f64;
            let labels = s
                .labels
                .iter()
                .map(|l| Label {
                    bbox: BBox::new(wf - l.bbox.x_max, l.bbox.y_min, wf - l.bbox.x_min, l.bbox.y_max),
                    ..*l
                })
                .collect();
            Ok(Sample { image, labels })
        }
        GeometricOp::Scale(k) => {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::invalid(format!("scale factor must be positive, got {k}")));
            }
            let nw = ((w as f64 * k).round() as usize).max(1);
            let nh = ((h as f64 * k).round() as usize).max(1);
            let mut image = ImageTensor::filled(nw, nh, [0.0; 3])?;
            for y in 0..nh {
                let sy = source_index(y, 0.0, k, h);
                for x in 0..nw {
                    image.set_pixel(x, y, src.pixel(source_index(x, 0.0, k, w), sy));
                }
            }
            let bounds = image.bounds();
            let labels = s
                .labels
                .iter()
                .filter_map(|l| clip_label(l, l.bbox.scale(k), &bounds, min_area_frac))
                .collect();
            Ok(Sample { image, labels })
        }
        GeometricOp::Crop(region) => {
            let x0 = region.x_min.floor();
            let y0 = region.y_min.floor();
            let x1 = region.x_max.ceil();
            let y1 = region.y_max.ceil();
            if !region.is_valid() || x0 < 0.0 || y0 < 0.0 || x1 > w as f64 || y1 > h as f64 || x1 <= x0 || y1 <= y0 {
                return Err(Error::invalid(format!("crop region {region:?} not inside the {w}x{h} image")));
            }
            let (x0u, y0u) = (x0 as usize, y0 as usize);
            let (nw, nh) = (x1 as usize - x0u, y1 as usize - y0u);
            let mut image = ImageTensor::filled(nw, nh, [0.0; 3])?;
            for y in 0..nh {
                for x in 0..nw {
                    image.set_pixel(x, y, src.pixel(x + x0u, y + y0u));
                }
            }
            let bounds = image.bounds();
            let labels = s
                .labels
                .iter()
                .filter_map(|l| clip_label(l, l.bbox.translate(-x0, -y0), &bounds, min_area_frac))
                .collect();
            Ok(Sample { image, labels })
        }
    }
}

/// Separable box filter of side `2·radius + 1` with clamped edges.
pub fn blur(s: &Sample, radius: usize) -> Sample {
    if radius == 0 {
        return s.clone();
    }
    let (w, h) = (s.image.width(), s.image.height());
    let norm = 1.0 / (2 * radius + 1) as f64;
    let r = radius as isize;
    let at = |x: isize, n: usize| x.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for dx in -r..=r {
                    acc += s.image.data[(y * w + at(x as isize + dx, w)) * 3 + c] as f64;
                }
                horiz[(y * w + x) * 3 + c] = acc * norm;
            }
        }
    }
    let mut data = vec![0.0f32; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in -r..=r {
                    acc += horiz[(at(y as isize + dy, h) * w + x) * 3 + c];
                }
                data[(y * w + x) * 3 + c] = clamp01((acc * norm) as f32);
            }
        }
    }
    Sample {
        image: ImageTensor { width: w, height: h, data },
        labels: s.labels.clone(),
    }
}
