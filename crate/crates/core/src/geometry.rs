//! Axis-aligned boxes and the IoU metric family.
//!
//! Two parameterizations are used throughout the crate: [`BBox`] stores the
//! top-left and bottom-right corners, [`CenterBox`] stores the center point
//! together with width and height. All metrics take corner-form boxes.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Corner-form box `(x_min, y_min, x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// Center-form box `(x_c, y_c, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CenterBox {
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Builds a box from COCO `[x, y, w, h]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    /// True when all coordinates are finite and the corners are ordered.
    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max >= self.x_min
            && self.y_max >= self.y_min
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Overlap region, or `None` when the boxes do not intersect with positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        (b.x_max > b.x_min && b.y_max > b.y_min).then_some(b)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        iw * ih
    }

    /// Smallest box covering both.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x_min.min(other.x_min),
            self.y_min.min(other.y_min),
            self.x_max.max(other.x_max),
            self.y_max.max(other.y_max),
        )
    }

    pub fn scale(&self, k: f64) -> BBox {
        BBox::new(self.x_min * k, self.y_min * k, self.x_max * k, self.y_max * k)
    }

    pub fn scale_xy(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.x_min * sx, self.y_min * sy, self.x_max * sx, self.y_max * sy)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    /// Clamps the box into `bounds`. The result may have zero area.
    pub fn clip(&self, bounds: &BBox) -> BBox {
        let x_min = self.x_min.clamp(bounds.x_min, bounds.x_max);
        let y_min = self.y_min.clamp(bounds.y_min, bounds.y_max);
        BBox::new(
            x_min,
            y_min,
            self.x_max.clamp(x_min, bounds.x_max),
            self.y_max.clamp(y_min, bounds.y_max),
        )
    }

    pub fn contains(&self, inner: &BBox) -> bool {
        inner.x_min >= self.x_min
            && inner.y_min >= self.y_min
            && inner.x_max <= self.x_max
            && inner.y_max <= self.y_max
    }

    pub fn to_center(&self) -> CenterBox {
        let (x_c, y_c) = self.center();
        CenterBox {
            x_c,
            y_c,
            w: self.width(),
            h: self.height(),
        }
    }
}

impl CenterBox {
    pub const fn new(x_c: f64, y_c: f64, w: f64, h: f64) -> Self {
        Self { x_c, y_c, w, h }
    }

    pub fn is_finite(&self) -> bool {
        [self.x_c, self.y_c, self.w, self.h].iter().all(|v| v.is_finite())
    }

    pub fn to_corner(&self) -> BBox {
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        BBox::new(self.x_c - hw, self.y_c - hh, self.x_c + hw, self.y_c + hh)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_c, self.y_c, self.w, self.h]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for CenterBox {
    fn from(b: BBox) -> Self {
        b.to_center()
    }
}

impl From<CenterBox> for BBox {
    fn from(c: CenterBox) -> Self {
        c.to_corner()
    }
}

/// Selects one member of the IoU family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Iou,
    Giou,
    Diou,
    Ciou,
}

impl IouKind {
    pub fn eval(self, a: &BBox, b: &BBox) -> f64 {
        match self {
            IouKind::Iou => iou(a, b),
            IouKind::Giou => giou(a, b),
            IouKind::Diou => diou(a, b),
            IouKind::Ciou => ciou(a, b),
        }
    }
}

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// IoU minus the fraction of the enclosing box not covered by the union.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let enclosing = a.enclosing(b).area();
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    if enclosing > 0.0 {
        // enclosing ≥ union holds exactly; rounding can flip the sign
        iou - (enclosing - union).max(0.0) / enclosing
    } else {
        iou
    }
}

/// Squared center distance over squared enclosing diagonal.
fn center_penalty(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let rho2 = (ax - bx).powi(2) + (ay - by).powi(2);
    let c = a.enclosing(b);
    let c2 = c.width().powi(2) + c.height().powi(2);
    if c2 > 0.0 {
        rho2 / c2
    } else {
        0.0
    }
}

/// IoU minus the normalized squared distance between box centers.
pub fn diou(a: &BBox, b: &BBox) -> f64 {
    iou(a, b) - center_penalty(a, b)
}

/// Aspect-ratio consistency term `v = 4/π² (atan(w_b/h_b) − atan(w_a/h_a))²`.
///
/// Zero when either box has zero width or height.
pub fn aspect_term(a: &BBox, b: &BBox) -> f64 {
    let (wa, ha, wb, hb) = (a.width(), a.height(), b.width(), b.height());
    if wa <= 0.0 || ha <= 0.0 || wb <= 0.0 || hb <= 0.0 {
        return 0.0;
    }
    let d = (wb / hb).atan() - (wa / ha).atan();
    4.0 / (PI * PI) * d * d
}

/// Trade-off weight `α = v / (1 − IoU + v)`; zero when `v` is zero.
pub fn ciou_alpha(iou: f64, v: f64) -> f64 {
    if v > 0.0 {
        v / (1.0 - iou + v)
    } else {
        0.0
    }
}

/// DIoU minus the weighted aspect-ratio term.
pub fn ciou(a: &BBox, b: &BBox) -> f64 {
    let iou = iou(a, b);
    let v = aspect_term(a, b);
    iou - center_penalty(a, b) - ciou_alpha(iou, v) * v
}

/// IoU of two `(w, h)` shapes placed on a common center.
pub fn shape_iou(w1: f64, h1: f64, w2: f64, h2: f64) -> f64 {
    let inter = w1.min(w2) * h1.min(h2);
    let union = w1 * h1 + w2 * h2 - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}
