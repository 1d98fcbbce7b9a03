//! Head decoding and ground-truth to anchor assignment.
//!
//! Center offsets are decoded as `s·σ(t) − (s − 1)/2 + c` cells, so that a
//! sensitivity scale `s > 1` lets the predicted center reach the cell
//! borders (and slightly beyond) at finite logits. With `s = 1` this is the
//! plain `σ(t) + c` form.

use crate::error::{Error, Result};
use crate::geometry::{shape_iou, CenterBox};
use serde::{Deserialize, Serialize};

/// IoU threshold above which an anchor is assigned to a ground truth.
pub const DEFAULT_ASSIGN_IOU_THRESHOLD: f64 = 0.213;

/// Default grid-sensitivity scale.
pub const DEFAULT_SENSITIVITY: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
    pub objectness: f64,
    pub class_scores: Vec<f64>,
    pub cell_x: usize,
    pub cell_y: usize,
    pub anchor_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Input pixels per grid cell.
    pub stride: f64,
    pub anchors: Vec<Anchor>,
    pub sensitivity: f64,
}

impl DecodeConfig {
    pub fn new(grid_w: usize, grid_h: usize, stride: f64, anchors: Vec<Anchor>) -> Result<Self> {
        let cfg = Self {
            grid_w,
            grid_h,
            stride,
            anchors,
            sensitivity: DEFAULT_SENSITIVITY,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_sensitivity(mut self, s: f64) -> Result<Self> {
        self.sensitivity = s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if !(self.stride > 0.0) || !self.stride.is_finite() {
            return Err(Error::invalid(format!("stride must be positive, got {}", self.stride)));
        }
        if !(self.sensitivity >= 1.0) || !self.sensitivity.is_finite() {
            return Err(Error::invalid(format!(
                "sensitivity scale must be >= 1, got {}",
                self.sensitivity
            )));
        }
        if self.anchors.is_empty() {
            return Err(Error::invalid("at least one anchor is required"));
        }
        if let Some(a) = self.anchors.iter().find(|a| !(a.w > 0.0 && a.h > 0.0)) {
            return Err(Error::invalid(format!("anchor {}x{} must be positive", a.w, a.h)));
        }
        Ok(())
    }

    /// Maps `σ(t)` to the in-cell offset for this scale.
    #[inline]
    pub fn cell_offset(&self, sig: f64) -> f64 {
        let s = self.sensitivity;
        s * sig - 0.5 * (s - 1.0)
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Box center and size in input pixels.
    pub bbox: CenterBox,
    pub objectness: f64,
    pub class_probs: Vec<f64>,
}

pub fn decode(p: &RawPrediction, cfg: &DecodeConfig) -> Result<Decoded> {
    let anchor = cfg.anchors.get(p.anchor_index).ok_or_else(|| {
        Error::invalid(format!(
            "anchor index {} out of range ({} anchors)",
            p.anchor_index,
            cfg.anchors.len()
        ))
    })?;
    if p.cell_x >= cfg.grid_w || p.cell_y >= cfg.grid_h {
        return Err(Error::invalid(format!(
            "cell ({}, {}) outside {}x{} grid",
            p.cell_x, p.cell_y, cfg.grid_w, cfg.grid_h
        )));
    }
    let x = (cfg.cell_offset(sigmoid(p.t_x)) + p.cell_x as f64) * cfg.stride;
    let y = (cfg.cell_offset(sigmoid(p.t_y)) + p.cell_y as f64) * cfg.stride;
    let w = anchor.w * p.t_w.exp();
    let h = anchor.h * p.t_h.exp();
    Ok(Decoded {
        bbox: CenterBox::new(x, y, w, h),
        objectness: sigmoid(p.objectness),
        class_probs: p.class_scores.iter().map(|&c| sigmoid(c)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cell_x: usize,
    pub cell_y: usize,
    pub anchor_index: usize,
    pub iou: f64,
}

/// Assigns a ground truth to every anchor whose shape IoU with it exceeds
/// `iou_threshold`, falling back to the single best anchor when none does.
/// All assignments share the grid cell containing the truth center.
pub fn assign_anchors(
    truth: &CenterBox,
    cfg: &DecodeConfig,
    iou_threshold: f64,
) -> Result<Vec<Assignment>> {
    if !truth.is_finite() || truth.w <= 0.0 || truth.h <= 0.0 {
        return Err(Error::DegenerateBox(format!("{truth:?}")));
    }
    let cell = |v: f64, n: usize| ((v / cfg.stride).floor().max(0.0) as usize).min(n - 1);
    let cell_x = cell(truth.x_c, cfg.grid_w);
    let cell_y = cell(truth.y_c, cfg.grid_h);

    let ious: Vec<f64> = cfg
        .anchors
        .iter()
        .map(|a| shape_iou(truth.w, truth.h, a.w, a.h))
        .collect();
    let mut out: Vec<Assignment> = ious
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > iou_threshold)
        .map(|(anchor_index, &iou)| Assignment {
            cell_x,
            cell_y,
            anchor_index,
            iou,
        })
        .collect();
    if out.is_empty() {
        let (anchor_index, &iou) = ious
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, &f64)>, (i, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((i, v)),
            })
            .expect("anchors are non-empty");
        out.push(Assignment {
            cell_x,
            cell_y,
            anchor_index,
            iou,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(t_x: f64, cell_x: usize) -> RawPrediction {
        RawPrediction {
            t_x,
            t_y: 0.0,
            t_w: 0.0,
            t_h: 0.0,
            objectness: 0.0,
            class_scores: vec![0.0, 2.0],
            cell_x,
            cell_y: 0,
            anchor_index: 0,
        }
    }

    fn cfg(s: f64) -> DecodeConfig {
        DecodeConfig::new(8, 8, 1.0, vec![Anchor::new(10., 10.)])
            .unwrap()
            .with_sensitivity(s)
            .unwrap()
    }

    #[test]
    fn decode_examples() {
        let d = decode(&pred(0.0, 3), &cfg(1.0)).unwrap();
        assert_eq!(d.bbox.x_c, 3.5);
        assert_eq!(d.bbox.w, 10.0);
        assert_eq!(d.objectness, 0.5);

        let d = decode(&pred(-800.0, 0), &cfg(2.0)).unwrap();
        assert!((d.bbox.x_c + 0.5).abs() < 1e-12);

        let d = decode(&pred(0.0, 5), &cfg(1.1)).unwrap();
        assert_eq!(d.bbox.x_c, 5.5);
    }

    #[test]
    fn decode_rejects_bad_indices() {
        let mut p = pred(0.0, 0);
        p.anchor_index = 3;
        assert!(decode(&p, &cfg(1.0)).is_err());
        assert!(decode(&pred(0.0, 8), &cfg(1.0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::new(4, 4, 8.0, vec![]).is_err());
        assert!(cfg(1.0).with_sensitivity(0.9).is_err());
        assert!(DecodeConfig::new(4, 4, 0.0, vec![Anchor::new(1., 1.)]).is_err());
    }

    #[test]
    fn assignment_examples() {
        let c = DecodeConfig::new(
            13,
            13,
            32.0,
            vec![Anchor::new(10., 10.), Anchor::new(20., 20.), Anchor::new(5., 40.)],
        )
        .unwrap();
        let truth = CenterBox::new(100.0, 70.0, 10.0, 10.0);
        let a = assign_anchors(&truth, &c, DEFAULT_ASSIGN_IOU_THRESHOLD).unwrap();
        let idx: Vec<usize> = a.iter().map(|x| x.anchor_index).collect();
        assert_eq!(idx, vec![0, 1]);
        assert_eq!(a[0].iou, 1.0);
        assert_eq!(a[1].iou, 0.25);
        assert_eq!((a[0].cell_x, a[0].cell_y), (3, 2));

        // nothing clears 0.99 except the exact match
        let a = assign_anchors(&CenterBox::new(5., 5., 7., 3.), &c, 0.99).unwrap();
        assert_eq!(a.len(), 1);
    }
}
