//! Box-regression losses with analytic gradients, label smoothing and loss
//! normalization.
//!
//! Gradients are taken with respect to the predicted box in center form
//! `(x_c, y_c, w, h)`. For CIoU the trade-off weight `α` is evaluated at the
//! current point and held constant, so the returned gradient is that of
//! `1 − DIoU + α·v` with `α` frozen.

use crate::error::{Error, Result};
use crate::geometry::{aspect_term, ciou_alpha, CenterBox};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::PI;

/// Default normalizer applied to the box loss, found by hyperparameter search.
pub const DEFAULT_LOSS_NORMALIZER: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxLoss {
    Mse,
    Iou,
    Giou,
    Diou,
    Ciou,
}

impl BoxLoss {
    pub const ALL: [BoxLoss; 5] = [
        BoxLoss::Mse,
        BoxLoss::Iou,
        BoxLoss::Giou,
        BoxLoss::Diou,
        BoxLoss::Ciou,
    ];

    pub fn is_iou_family(self) -> bool {
        !matches!(self, BoxLoss::Mse)
    }
}

impl std::str::FromStr for BoxLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(BoxLoss::Mse),
            "iou" => Ok(BoxLoss::Iou),
            "giou" => Ok(BoxLoss::Giou),
            "diou" => Ok(BoxLoss::Diou),
            "ciou" => Ok(BoxLoss::Ciou),
            other => Err(Error::invalid(format!("unknown box loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLossResult {
    pub value: f64,
    /// ∂loss/∂(x_c, y_c, w, h) of the prediction.
    pub grad: [f64; 4],
}

/// Corner-form quantities with their derivatives w.r.t. the prediction's
/// corners `(x1, y1, x2, y2)`.
#[derive(Clone, Copy)]
struct Scalar {
    v: f64,
    d: [f64; 4],
}

impl Scalar {
    fn constant(v: f64) -> Self {
        Self { v, d: [0.0; 4] }
    }
}

/// Loss between a predicted and a ground-truth box.
pub fn box_loss(pred: &CenterBox, truth: &CenterBox, kind: BoxLoss) -> Result<BoxLossResult> {
    if !pred.is_finite() {
        return Err(Error::NonFinite("predicted box"));
    }
    if !truth.is_finite() {
        return Err(Error::NonFinite("ground-truth box"));
    }
    if truth.w <= 0.0 || truth.h <= 0.0 {
        return Err(Error::DegenerateBox(format!(
            "ground truth needs positive size, got w={} h={}",
            truth.w, truth.h
        )));
    }
    match kind {
        BoxLoss::Mse => Ok(mse(pred, truth)),
        _ => {
            if pred.w <= 0.0 || pred.h <= 0.0 {
                return Err(Error::DegenerateBox(format!(
                    "prediction needs positive size for {kind:?} loss, got w={} h={}",
                    pred.w, pred.h
                )));
            }
            Ok(iou_family(pred, truth, kind))
        }
    }
}

fn mse(pred: &CenterBox, truth: &CenterBox) -> BoxLossResult {
    let p = pred.as_array();
    let t = truth.as_array();
    let mut value = 0.0;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let d = p[i] - t[i];
        value += d * d;
        grad[i] = 2.0 * d;
    }
    BoxLossResult { value, grad }
}

fn iou_family(pred: &CenterBox, truth: &CenterBox, kind: BoxLoss) -> BoxLossResult {
    let p = pred.to_corner();
    let t = truth.to_corner();

    // Intersection extents. Index order of derivatives: x1, y1, x2, y2.
    let iw_raw = p.x_max.min(t.x_max) - p.x_min.max(t.x_min);
    let ih_raw = p.y_max.min(t.y_max) - p.y_min.max(t.y_min);
    let mut iw = Scalar::constant(iw_raw.max(0.0));
    let mut ih = Scalar::constant(ih_raw.max(0.0));
    if iw_raw > 0.0 && ih_raw > 0.0 {
        iw.d[2] = owns(p.x_max, t.x_max, Ordering::Less);
        iw.d[0] = -owns(p.x_min, t.x_min, Ordering::Greater);
        ih.d[3] = owns(p.y_max, t.y_max, Ordering::Less);
        ih.d[1] = -owns(p.y_min, t.y_min, Ordering::Greater);
    } else {
        iw = Scalar::constant(0.0);
        ih = Scalar::constant(0.0);
    }
    let inter = mul(iw, ih);

    let pw = Scalar {
        v: p.x_max - p.x_min,
        d: [-1.0, 0.0, 1.0, 0.0],
    };
    let ph = Scalar {
        v: p.y_max - p.y_min,
        d: [0.0, -1.0, 0.0, 1.0],
    };
    let pred_area = mul(pw, ph);
    let truth_area = t.area();
    let union = sub(add_const(pred_area, truth_area), inter);
    let iou = div(inter, union);

    let metric_corner = match kind {
        BoxLoss::Iou => iou,
        _ => {
            let mut cw = Scalar::constant(p.x_max.max(t.x_max) - p.x_min.min(t.x_min));
            let mut ch = Scalar::constant(p.y_max.max(t.y_max) - p.y_min.min(t.y_min));
            cw.d[2] = owns(p.x_max, t.x_max, Ordering::Greater);
            cw.d[0] = -owns(p.x_min, t.x_min, Ordering::Less);
            ch.d[3] = owns(p.y_max, t.y_max, Ordering::Greater);
            ch.d[1] = -owns(p.y_min, t.y_min, Ordering::Less);
            match kind {
                BoxLoss::Giou => {
                    // IoU − (C − U)/C = IoU − 1 + U/C
                    let c = mul(cw, ch);
                    add_const(add(iou, div(union, c)), -1.0)
                }
                _ => {
                    let pcx = Scalar {
                        v: 0.5 * (p.x_min + p.x_max),
                        d: [0.5, 0.0, 0.5, 0.0],
                    };
                    let pcy = Scalar {
                        v: 0.5 * (p.y_min + p.y_max),
                        d: [0.0, 0.5, 0.0, 0.5],
                    };
                    let (tcx, tcy) = t.center();
                    let dx = add_const(pcx, -tcx);
                    let dy = add_const(pcy, -tcy);
                    let rho2 = add(mul(dx, dx), mul(dy, dy));
                    let c2 = add(mul(cw, cw), mul(ch, ch));
                    sub(iou, div(rho2, c2))
                }
            }
        }
    };

    let mut value = 1.0 - metric_corner.v;
    let mut grad = corner_to_center(neg(metric_corner).d);

    if kind == BoxLoss::Ciou {
        let v = aspect_term(&p, &t);
        let alpha = ciou_alpha(iou.v, v);
        value += alpha * v;
        if alpha > 0.0 {
            // dv/dw and dv/dh, differentiated directly in center form.
            let k = 4.0 / (PI * PI);
            let (w, h) = (pred.w, pred.h);
            let diff = (truth.w / truth.h).atan() - (w / h).atan();
            let r2 = w * w + h * h;
            grad[2] += alpha * 2.0 * k * diff * (-h / r2);
            grad[3] += alpha * 2.0 * k * diff * (w / r2);
        }
    }

    BoxLossResult {
        value: value.max(0.0),
        grad,
    }
}

/// Share of a min/max taken by the prediction's edge: 1 when it wins
/// strictly, ½ on a tie (the midpoint of the subgradient), 0 otherwise.
fn owns(pred: f64, truth: f64, wins: Ordering) -> f64 {
    match pred.partial_cmp(&truth) {
        Some(o) if o == wins => 1.0,
        Some(Ordering::Equal) => 0.5,
        _ => 0.0,
    }
}

/// Chain rule from corner derivatives to (x_c, y_c, w, h):
/// x1 = x_c − w/2, x2 = x_c + w/2.
fn corner_to_center(d: [f64; 4]) -> [f64; 4] {
    [
        d[0] + d[2],
        d[1] + d[3],
        0.5 * (d[2] - d[0]),
        0.5 * (d[3] - d[1]),
    ]
}

fn add(a: Scalar, b: Scalar) -> Scalar {
    Scalar {
        v: a.v + b.v,
        d: std::array::from_fn(|i| a.d[i] + b.d[i]),
    }
}

fn sub(a: Scalar, b: Scalar) -> Scalar {
    Scalar {
        v: a.v - b.v,
        d: std::array::from_fn(|i| a.d[i] - b.d[i]),
    }
}

fn neg(a: Scalar) -> Scalar {
    Scalar {
        v: -a.v,
        d: a.d.map(|x| -x),
    }
}

fn add_const(a: Scalar, c: f64) -> Scalar {
    Scalar { v: a.v + c, d: a.d }
}

fn mul(a: Scalar, b: Scalar) -> Scalar {
    Scalar {
        v: a.v * b.v,
        d: std::array::from_fn(|i| a.d[i] * b.v + a.v * b.d[i]),
    }
}

fn div(a: Scalar, b: Scalar) -> Scalar {
    if b.v == 0.0 {
        return Scalar::constant(0.0);
    }
    let inv = 1.0 / b.v;
    Scalar {
        v: a.v * inv,
        d: std::array::from_fn(|i| (a.d[i] * b.v - a.v * b.d[i]) * inv * inv),
    }
}

/// Mixes a one-hot (or any probability) vector with the uniform distribution:
/// `out_i = p_i (1 − ε) + ε / K`.
pub fn label_smooth(onehot: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "label smoothing epsilon must be in [0, 1), got {epsilon}"
        )));
    }
    if onehot.is_empty() {
        return Err(Error::invalid("label vector is empty"));
    }
    if onehot.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("label vector"));
    }
    let sum: f64 = onehot.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "label vector must sum to 1, got {sum}"
        )));
    }
    let k = onehot.len() as f64;
    Ok(onehot
        .iter()
        .map(|&p| p * (1.0 - epsilon) + epsilon / k)
        .collect())
}

/// Scales a raw loss by a positive normalizer.
pub fn loss_normalize(raw_loss: f64, normalizer: f64) -> Result<f64> {
    if !(normalizer > 0.0) || !normalizer.is_finite() {
        return Err(Error::invalid(format!(
            "loss normalizer must be positive, got {normalizer}"
        )));
    }
    Ok(raw_loss * normalizer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_prediction_has_zero_loss() {
        let b = CenterBox::new(3.0, 4.0, 2.0, 5.0);
        for kind in BoxLoss::ALL {
            let r = box_loss(&b, &b, kind).unwrap();
            assert_eq!(r.value, 0.0, "{kind:?}");
            assert!(r.grad.iter().all(|g| g.is_finite()));
            // center-penalty terms vanish at identity
            if matches!(kind, BoxLoss::Mse | BoxLoss::Diou | BoxLoss::Ciou) {
                assert_eq!(r.grad[0], 0.0);
                assert_eq!(r.grad[1], 0.0);
            }
        }
    }

    #[test]
    fn mse_example() {
        let r = box_loss(
            &CenterBox::new(0., 0., 2., 2.),
            &CenterBox::new(1., 0., 2., 2.),
            BoxLoss::Mse,
        )
        .unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.grad, [-2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ciou_example_value() {
        // pred (1,1,2,2) vs truth (2,2,2,2): corners (0,0,2,2) and (1,1,3,3),
        // IoU = 1/7, ρ² = 2, c² = 18, equal aspect ratios so v = 0.
        let r = box_loss(
            &CenterBox::new(1., 1., 2., 2.),
            &CenterBox::new(2., 2., 2., 2.),
            BoxLoss::Ciou,
        )
        .unwrap();
        let expected = 1.0 - (1.0 / 7.0 - 2.0 / 18.0);
        assert!((r.value - expected).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_non_finite_inputs_fail() {
        let t = CenterBox::new(0., 0., 1., 1.);
        let flat = CenterBox::new(0., 0., 0., 1.);
        assert!(matches!(
            box_loss(&flat, &t, BoxLoss::Giou),
            Err(Error::DegenerateBox(_))
        ));
        assert!(box_loss(&flat, &t, BoxLoss::Mse).is_ok());
        let nan = CenterBox::new(f64::NAN, 0., 1., 1.);
        assert!(matches!(
            box_loss(&nan, &t, BoxLoss::Mse),
            Err(Error::NonFinite(_))
        ));
        assert!(box_loss(&t, &flat, BoxLoss::Mse).is_err());
    }

    #[test]
    fn label_smooth_examples() {
        assert_eq!(label_smooth(&[0.0, 1.0, 0.0], 0.0).unwrap(), vec![0.0, 1.0, 0.0]);
        let s = label_smooth(&[1.0, 0.0], 0.1).unwrap();
        assert!((s[0] - 0.95).abs() < 1e-15 && (s[1] - 0.05).abs() < 1e-15);
        let u = [0.25; 4];
        assert_eq!(label_smooth(&u, 0.3).unwrap(), u.to_vec());
        assert!(label_smooth(&[1.0, 0.0], 1.0).is_err());
        assert!(label_smooth(&[1.0, 0.0], -0.1).is_err());
    }

    #[test]
    fn loss_normalize_examples() {
        assert_eq!(loss_normalize(1.0, DEFAULT_LOSS_NORMALIZER).unwrap(), 0.07);
        assert_eq!(loss_normalize(3.5, 1.0).unwrap(), 3.5);
        assert_eq!(loss_normalize(0.0, 0.3).unwrap(), 0.0);
        assert!(loss_normalize(1.0, 0.0).is_err());
        assert!(loss_normalize(1.0, -1.0).is_err());
    }
}
