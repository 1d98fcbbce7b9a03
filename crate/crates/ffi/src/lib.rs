//! C ABI over `bofkit`.
//!
//! Every fallible function returns a [`BofStatus`]; on failure the message is
//! available from [`bof_last_error`] on the same thread. Stateful objects are
//! opaque handles created by a `*_new` function and released with the
//! matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bofkit::decode::{decode, Anchor, DecodeConfig, RawPrediction};
use bofkit::evalap::{evaluate, GroundTruthSet, ImageDetection};
use bofkit::featuremap::{activation, Activation};
use bofkit::geometry::{BBox, CenterBox, IouKind};
use bofkit::losses::{box_loss, BoxLoss};
use bofkit::nms::{diou_nms, greedy_nms, soft_nms, Detection, SoftNmsMode, SoftNmsParams};
use bofkit::trainsched::{cosine_lr, step_decay_lr, CmBnAccumulator};
use bofkit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BofStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonFinite = 3,
    DegenerateBox = 4,
    ShapeMismatch = 5,
    UnknownImage = 6,
    Panic = 7,
    Other = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BofIouKind {
    Iou = 0,
    Giou = 1,
    Diou = 2,
    Ciou = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BofLossKind {
    Mse = 0,
    Iou = 1,
    Giou = 2,
    Diou = 3,
    Ciou = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BofActivation {
    Mish = 0,
    Swish = 1,
    LeakyRelu = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BofNmsKind {
    Greedy = 0,
    Diou = 1,
    SoftLinear = 2,
    SoftGaussian = 3,
}

/// Corner-form box.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BofBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// Center-form box.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BofCenterBox {
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BofDetection {
    pub bbox: BofBox,
    pub score: f64,
    pub class_id: u32,
}

/// Soft-NMS settings; ignored by the hard variants.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BofSoftNmsParams {
    pub sigma: f64,
    pub score_floor: f64,
}

/// AP columns; a metric is meaningful only when its `has_*` flag is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BofEvalResult {
    /// AP, AP50, AP75, AP_S, AP_M, AP_L.
    pub values: [f64; 6],
    pub has_value: [bool; 6],
}

/// List of detections.
pub struct BofDetections(Vec<Detection>);

/// Cross-mini-batch normalization statistics.
pub struct BofCmBn(CmBnAccumulator);

/// Ground truth plus detections awaiting evaluation.
pub struct BofEvaluator {
    truths: GroundTruthSet,
    dets: Vec<ImageDetection>,
}

impl From<BofBox> for BBox {
    fn from(b: BofBox) -> Self {
        BBox::new(b.x_min, b.y_min, b.x_max, b.y_max)
    }
}

impl From<BBox> for BofBox {
    fn from(b: BBox) -> Self {
        BofBox { x_min: b.x_min, y_min: b.y_min, x_max: b.x_max, y_max: b.y_max }
    }
}

impl From<BofCenterBox> for CenterBox {
    fn from(b: BofCenterBox) -> Self {
        CenterBox::new(b.x_c, b.y_c, b.w, b.h)
    }
}

impl From<CenterBox> for BofCenterBox {
    fn from(b: CenterBox) -> Self {
        BofCenterBox { x_c: b.x_c, y_c: b.y_c, w: b.w, h: b.h }
    }
}

impl From<Detection> for BofDetection {
    fn from(d: Detection) -> Self {
        BofDetection { bbox: d.bbox.into(), score: d.score, class_id: d.class_id }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

/// Message of the last failure on this thread, or null when the last call
/// succeeded. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn bof_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

enum Fail {
    Null(&'static str),
    Core(Error),
    Invalid(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn status_of(e: &Error) -> BofStatus {
    match e {
        Error::InvalidArgument(_) => BofStatus::InvalidArgument,
        Error::NonFinite(_) => BofStatus::NonFinite,
        Error::DegenerateBox(_) => BofStatus::DegenerateBox,
        Error::ShapeMismatch(_) => BofStatus::ShapeMismatch,
        Error::UnknownImage(_) => BofStatus::UnknownImage,
        _ => BofStatus::Other,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BofStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BofStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BofStatus::NullPointer
        }
        Ok(Err(Fail::Invalid(msg))) => {
            set_error(msg);
            BofStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BofStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(std::slice::from_raw_parts(p, len))
    }
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        Ok(&mut [])
    } else if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(std::slice::from_raw_parts_mut(p, len))
    }
}

/// Overlap metric between two corner boxes.
///
/// # Safety
/// `a`, `b` and `out` must be null or valid for the pointed-to type.
#[no_mangle]
pub unsafe extern "C" fn bof_overlap(kind: BofIouKind, a: *const BofBox, b: *const BofBox, out: *mut f64) -> BofStatus {
    guard(|| {
        let (a, b) = (BBox::from(*get(a, "a")?), BBox::from(*get(b, "b")?));
        let out = get_mut(out, "out")?;
        if !a.is_valid() || !b.is_valid() {
            return Err(Fail::Invalid("boxes must be finite with ordered corners".into()));
        }
        let kind = match kind {
            BofIouKind::Iou => IouKind::Iou,
            BofIouKind::Giou => IouKind::Giou,
            BofIouKind::Diou => IouKind::Diou,
            BofIouKind::Ciou => IouKind::Ciou,
        };
        *out = kind.eval(&a, &b);
        Ok(())
    })
}

/// Box-regression loss and its gradient w.r.t. the prediction's
/// `(x_c, y_c, w, h)`. `grad` may be null.
///
/// # Safety
/// Non-null pointers must be valid; `grad` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn bof_box_loss(
    kind: BofLossKind,
    pred: *const BofCenterBox,
    truth: *const BofCenterBox,
    value: *mut f64,
    grad: *mut f64,
) -> BofStatus {
    guard(|| {
        let (p, t) = (CenterBox::from(*get(pred, "pred")?), CenterBox::from(*get(truth, "truth")?));
        let value = get_mut(value, "value")?;
        let kind = match kind {
            BofLossKind::Mse => BoxLoss::Mse,
            BofLossKind::Iou => BoxLoss::Iou,
            BofLossKind::Giou => BoxLoss::Giou,
            BofLossKind::Diou => BoxLoss::Diou,
            BofLossKind::Ciou => BoxLoss::Ciou,
        };
        let r = box_loss(&p, &t, kind)?;
        *value = r.value;
        if !grad.is_null() {
            std::slice::from_raw_parts_mut(grad, 4).copy_from_slice(&r.grad);
        }
        Ok(())
    })
}

/// Decodes one raw box prediction at grid cell `(cell_x, cell_y)` with the
/// given anchor, stride and grid sensitivity (1 disables the scaling).
///
/// # Safety
/// `t` must be null or hold `t_x, t_y, t_w, t_h`; `out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_decode_box(
    t: *const f64,
    cell_x: usize,
    cell_y: usize,
    stride: f64,
    anchor_w: f64,
    anchor_h: f64,
    sensitivity: f64,
    out: *mut BofCenterBox,
) -> BofStatus {
    guard(|| {
        let t = slice(t, 4, "t")?;
        let out = get_mut(out, "out")?;
        let cfg = DecodeConfig::new(cell_x + 1, cell_y + 1, stride, vec![Anchor::new(anchor_w, anchor_h)])?
            .with_sensitivity(sensitivity)?;
        let raw = RawPrediction {
            t_x: t[0],
            t_y: t[1],
            t_w: t[2],
            t_h: t[3],
            objectness: 0.0,
            class_scores: vec![],
            cell_x,
            cell_y,
            anchor_index: 0,
        };
        *out = decode(&raw, &cfg)?.bbox.into();
        Ok(())
    })
}

/// Activation value and derivative at `x`. `slope` is used by leaky ReLU only.
///
/// # Safety
/// Non-null pointers must be valid. `derivative` may be null.
#[no_mangle]
pub unsafe extern "C" fn bof_activation(
    kind: BofActivation,
    slope: f64,
    x: f64,
    value: *mut f64,
    derivative: *mut f64,
) -> BofStatus {
    guard(|| {
        let value = get_mut(value, "value")?;
        let kind = match kind {
            BofActivation::Mish => Activation::Mish,
            BofActivation::Swish => Activation::Swish,
            BofActivation::LeakyRelu => Activation::LeakyRelu(slope),
        };
        let (v, d) = activation(x, kind);
        *value = v;
        if let Some(out) = derivative.as_mut() {
            *out = d;
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_cosine_lr(t: u64, total: u64, lr_max: f64, lr_min: f64, out: *mut f64) -> BofStatus {
    guard(|| {
        *get_mut(out, "out")? = cosine_lr(t, total, lr_max, lr_min)?;
        Ok(())
    })
}

/// # Safety
/// `milestones` must point at `n_milestones` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bof_step_decay_lr(
    t: u64,
    milestones: *const u64,
    n_milestones: usize,
    lr0: f64,
    factor: f64,
    out: *mut f64,
) -> BofStatus {
    guard(|| {
        let m = slice(milestones, n_milestones, "milestones")?;
        *get_mut(out, "out")? = step_decay_lr(t, m, lr0, factor);
        Ok(())
    })
}

/// Creates an empty detection list.
#[no_mangle]
pub extern "C" fn bof_detections_new() -> *mut BofDetections {
    Box::into_raw(Box::new(BofDetections(Vec::new())))
}

/// # Safety
/// `list` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bof_detections_free(list: *mut BofDetections) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_detections_push(list: *mut BofDetections, det: *const BofDetection) -> BofStatus {
    guard(|| {
        let list = get_mut(list, "list")?;
        let d = *get(det, "det")?;
        let bbox = BBox::from(d.bbox);
        if !bbox.is_valid() || !d.score.is_finite() {
            return Err(Fail::Invalid("detection must be finite with ordered corners".into()));
        }
        list.0.push(Detection::new(bbox, d.score, d.class_id));
        Ok(())
    })
}

/// Number of detections; 0 for a null handle.
///
/// # Safety
/// `list` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_detections_len(list: *const BofDetections) -> usize {
    list.as_ref().map_or(0, |l| l.0.len())
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_detections_get(list: *const BofDetections, index: usize, out: *mut BofDetection) -> BofStatus {
    guard(|| {
        let list = get(list, "list")?;
        let d = list
            .0
            .get(index)
            .ok_or_else(|| Fail::Invalid(format!("index {index} out of range ({} detections)", list.0.len())))?;
        *get_mut(out, "out")? = (*d).into();
        Ok(())
    })
}

/// Runs NMS and stores a new list of survivors, in score order, in `*out`.
/// `soft` is required for the soft variants only.
///
/// # Safety
/// Pointers must be null or valid; the result must be released with
/// [`bof_detections_free`].
#[no_mangle]
pub unsafe extern "C" fn bof_nms(
    list: *const BofDetections,
    kind: BofNmsKind,
    threshold: f64,
    soft: *const BofSoftNmsParams,
    out: *mut *mut BofDetections,
) -> BofStatus {
    guard(|| {
        let dets = &get(list, "list")?.0;
        let out = get_mut(out, "out")?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Fail::Invalid(format!("threshold {threshold} outside [0, 1]")));
        }
        let kept = match kind {
            BofNmsKind::Greedy => greedy_nms(dets, threshold),
            BofNmsKind::Diou => diou_nms(dets, threshold),
            BofNmsKind::SoftLinear | BofNmsKind::SoftGaussian => {
                let s = get(soft, "soft")?;
                if !(s.sigma > 0.0) {
                    return Err(Fail::Invalid("sigma must be positive".into()));
                }
                let params = SoftNmsParams {
                    iou_threshold: threshold,
                    sigma: s.sigma,
                    score_floor: s.score_floor,
                    mode: if kind == BofNmsKind::SoftLinear { SoftNmsMode::Linear } else { SoftNmsMode::Gaussian },
                };
                soft_nms(dets, &params)
            }
        };
        *out = Box::into_raw(Box::new(BofDetections(kept)));
        Ok(())
    })
}

/// # Safety
/// `out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_cmbn_new(channels: usize, minibatches_per_batch: usize, out: *mut *mut BofCmBn) -> BofStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = Box::into_raw(Box::new(BofCmBn(CmBnAccumulator::new(channels, minibatches_per_batch)?)));
        Ok(())
    })
}

/// # Safety
/// `acc` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bof_cmbn_free(acc: *mut BofCmBn) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

/// Folds in one mini-batch laid out channel-major (`channels × per_channel`
/// values) and writes the running mean and variance of the current batch.
///
/// # Safety
/// `values` must hold `channels * per_channel` doubles; `mean` and
/// `variance` must each hold `channels` doubles.
#[no_mangle]
pub unsafe extern "C" fn bof_cmbn_update(
    acc: *mut BofCmBn,
    values: *const f64,
    per_channel: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> BofStatus {
    guard(|| {
        let acc = &mut get_mut(acc, "acc")?.0;
        let c = acc.channels();
        let total = c.checked_mul(per_channel).ok_or_else(|| Fail::Invalid("size overflow".into()))?;
        let values = slice(values, total, "values")?;
        let mean = slice_mut(mean, c, "mean")?;
        let variance = slice_mut(variance, c, "variance")?;
        let chunks: Vec<&[f64]> = if per_channel == 0 { vec![&[]; c] } else { values.chunks(per_channel).collect() };
        let stats = acc.update(&chunks)?;
        mean.copy_from_slice(&stats.mean);
        variance.copy_from_slice(&stats.variance);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn bof_evaluator_new() -> *mut BofEvaluator {
    Box::into_raw(Box::new(BofEvaluator { truths: GroundTruthSet::new(), dets: Vec::new() }))
}

/// # Safety
/// `ev` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bof_evaluator_free(ev: *mut BofEvaluator) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}

/// Registers an image, which may have no ground truth.
///
/// # Safety
/// `ev` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_evaluator_add_image(ev: *mut BofEvaluator, image_id: u64) -> BofStatus {
    guard(|| {
        get_mut(ev, "ev")?.truths.add_image(image_id);
        Ok(())
    })
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_evaluator_add_truth(
    ev: *mut BofEvaluator,
    image_id: u64,
    bbox: *const BofBox,
    class_id: u32,
) -> BofStatus {
    guard(|| {
        let ev = get_mut(ev, "ev")?;
        let b = BBox::from(*get(bbox, "bbox")?);
        if !b.is_valid() {
            return Err(Fail::Invalid("box must be finite with ordered corners".into()));
        }
        ev.truths.add(image_id, b, class_id);
        Ok(())
    })
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_evaluator_add_detection(
    ev: *mut BofEvaluator,
    image_id: u64,
    det: *const BofDetection,
) -> BofStatus {
    guard(|| {
        let ev = get_mut(ev, "ev")?;
        let d = *get(det, "det")?;
        let b = BBox::from(d.bbox);
        if !b.is_valid() || !d.score.is_finite() {
            return Err(Fail::Invalid("detection must be finite with ordered corners".into()));
        }
        ev.dets.push(ImageDetection { image_id, det: Detection::new(b, d.score, d.class_id) });
        Ok(())
    })
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn bof_evaluator_run(ev: *const BofEvaluator, out: *mut BofEvalResult) -> BofStatus {
    guard(|| {
        let ev = get(ev, "ev")?;
        let out = get_mut(out, "out")?;
        let r = evaluate(&ev.dets, &ev.truths)?;
        let mut res = BofEvalResult::default();
        for (i, v) in r.values().into_iter().enumerate() {
            res.values[i] = v.unwrap_or(0.0);
            res.has_value[i] = v.is_some();
        }
        *out = res;
        Ok(())
    })
}
