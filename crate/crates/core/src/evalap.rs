//! COCO-style average precision for box detections.
//!
//! For each class, IoU threshold and area range, detections are matched
//! greedily in descending score order to the unmatched ground truth with the
//! highest IoU at or above the threshold. Precision is made monotone and
//! sampled at 101 recall points. Ground truths outside the area range are
//! ignored, as are detections matched to them and unmatched detections whose
//! own area falls outside the range.

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::nms::Detection;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

/// `0.50, 0.55, …, 0.95`.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

pub const RECALL_POINTS: usize = 101;

/// Upper area bound of small objects (32²).
pub const SMALL_AREA: f64 = 1024.0;
/// Upper area bound of medium objects (96²).
pub const MEDIUM_AREA: f64 = 9216.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub fn contains(self, area: f64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => area < SMALL_AREA,
            AreaRange::Medium => (SMALL_AREA..=MEDIUM_AREA).contains(&area),
            AreaRange::Large => area > MEDIUM_AREA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: u32,
}

/// Ground truth per image. Images without objects are registered with
/// [`GroundTruthSet::add_image`] so detections on them count as false positives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    images: BTreeMap<u64, Vec<GroundTruth>>,
}

impl GroundTruthSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_image(&mut self, image_id: u64) {
        self.images.entry(image_id).or_default();
    }

    pub fn add(&mut self, image_id: u64, bbox: BBox, class_id: u32) {
        self.images
            .entry(image_id)
            .or_default()
            .push(GroundTruth { bbox, class_id });
    }

    pub fn contains_image(&self, image_id: u64) -> bool {
        self.images.contains_key(&image_id)
    }

    pub fn image_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.images.keys().copied()
    }

    pub fn truths(&self, image_id: u64) -> &[GroundTruth] {
        self.images.get(&image_id).map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageDetection {
    pub image_id: u64,
    pub det: Detection,
}

/// Headline metrics; `None` when no ground truth falls in the relevant range.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    #[serde(rename = "AP50")]
    pub ap50: Option<f64>,
    #[serde(rename = "AP75")]
    pub ap75: Option<f64>,
    #[serde(rename = "AP_S")]
    pub ap_small: Option<f64>,
    #[serde(rename = "AP_M")]
    pub ap_medium: Option<f64>,
    #[serde(rename = "AP_L")]
    pub ap_large: Option<f64>,
}

impl EvalResult {
    pub const COLUMNS: [&'static str; 6] = ["AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"];

    pub fn values(&self) -> [Option<f64>; 6] {
        [
            self.ap,
            self.ap50,
            self.ap75,
            self.ap_small,
            self.ap_medium,
            self.ap_large,
        ]
    }
}

/// Evaluates detections against ground truth.
pub fn evaluate(dets: &[ImageDetection], truths: &GroundTruthSet) -> Result<EvalResult> {
    if let Some(d) = dets.iter().find(|d| !truths.contains_image(d.image_id)) {
        return Err(Error::UnknownImage(d.image_id));
    }
    if let Some(d) = dets.iter().find(|d| !d.det.score.is_finite() || !d.det.bbox.is_valid()) {
        return Err(Error::invalid(format!(
            "detection on image {} has invalid box or score: {:?}",
            d.image_id, d.det
        )));
    }

    let classes: BTreeSet<u32> = truths
        .images
        .values()
        .flatten()
        .map(|t| t.class_id)
        .collect();
    let thresholds = iou_thresholds();

    // ap[range][threshold] = per-class APs
    let ranges = [AreaRange::All, AreaRange::Small, AreaRange::Medium, AreaRange::Large];
    let mut per: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); thresholds.len()]; ranges.len()];

    for &class in &classes {
        for (ri, &range) in ranges.iter().enumerate() {
            for (ti, &thr) in thresholds.iter().enumerate() {
                if let Some(ap) = class_ap(dets, truths, class, range, thr) {
                    per[ri][ti].push(ap);
                }
            }
        }
    }

    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let over_thresholds = |ri: usize| -> Option<f64> {
        let vals: Vec<f64> = per[ri].iter().filter_map(|v| mean(v)).collect();
        (vals.len() == thresholds.len()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(EvalResult {
        ap: over_thresholds(0),
        ap50: mean(&per[0][0]),
        ap75: mean(&per[0][5]),
        ap_small: over_thresholds(1),
        ap_medium: over_thresholds(2),
        ap_large: over_thresholds(3),
    })
}

/// AP of one class at one threshold and area range; `None` without any
/// non-ignored ground truth.
fn class_ap(
    dets: &[ImageDetection],
    truths: &GroundTruthSet,
    class: u32,
    range: AreaRange,
    thr: f64,
) -> Option<f64> {
    let mut npig = 0usize;
    // (score, input order, is_tp, ignored)
    let mut scored: Vec<(f64, usize, bool, bool)> = Vec::new();

    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        if d.det.class_id == class {
            by_image.entry(d.image_id).or_default().push(i);
        }
    }

    for image_id in truths.image_ids() {
        let gts: Vec<&GroundTruth> = truths
            .truths(image_id)
            .iter()
            .filter(|t| t.class_id == class)
            .collect();
        let gt_ignore: Vec<bool> = gts.iter().map(|g| !range.contains(g.bbox.area())).collect();
        npig += gt_ignore.iter().filter(|&&ig| !ig).count();

        let Some(mut idx) = by_image.remove(&image_id) else {
            continue;
        };
        idx.sort_by(|&a, &b| {
            dets[b]
                .det
                .score
                .partial_cmp(&dets[a].det.score)
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; gts.len()];
        for i in idx {
            let d = &dets[i].det;
            // prefer a non-ignored truth; among equals take the highest IoU
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(&d.bbox, &gt.bbox);
                if v < thr {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bg, bv)) => match (gt_ignore[bg], gt_ignore[g]) {
                        (true, false) => true,
                        (false, true) => false,
                        _ => v > bv,
                    },
                };
                if better {
                    best = Some((g, v));
                }
            }
            let (tp, ignored) = match best {
                Some((g, _)) => {
                    taken[g] = true;
                    (true, gt_ignore[g])
                }
                None => (false, !range.contains(d.bbox.area())),
            };
            scored.push((d.score, i, tp, ignored));
        }
    }

    if npig == 0 {
        return None;
    }
    scored.retain(|s| !s.3);
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));

    let mut precision = Vec::with_capacity(scored.len());
    let mut recall = Vec::with_capacity(scored.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for s in &scored {
        if s.2 {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / npig as f64);
    }
    Some(interpolated_ap(&precision, &recall))
}

/// 101-point interpolated AP from a precision/recall sequence ordered by
/// descending score.
pub fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut total = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let pos = recall.partition_point(|&x| x < r);
        if pos < envelope.len() {
            total += envelope[pos];
        }
    }
    total / RECALL_POINTS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(image_id: u64, b: BBox, score: f64) -> ImageDetection {
        ImageDetection {
            image_id,
            det: Detection::new(b, score, 0),
        }
    }

    #[test]
    fn canonical_cases() {
        let b = BBox::new(10., 10., 60., 60.);
        let mut gt = GroundTruthSet::new();
        gt.add(1, b, 0);

        let perfect = evaluate(&[det(1, b, 0.9)], &gt).unwrap();
        assert_eq!(perfect.ap, Some(1.0));
        assert_eq!(perfect.ap50, Some(1.0));
        assert_eq!(perfect.ap75, Some(1.0));
        assert_eq!(perfect.ap_medium, Some(1.0));
        assert_eq!(perfect.ap_small, None);
        assert_eq!(perfect.ap_large, None);

        let fp_first = evaluate(
            &[det(1, BBox::new(200., 200., 250., 250.), 0.9), det(1, b, 0.5)],
            &gt,
        )
        .unwrap();
        assert_eq!(fp_first.ap50, Some(0.5));

        let none = evaluate(&[], &gt).unwrap();
        assert_eq!(none.ap, Some(0.0));
    }

    #[test]
    fn unknown_image_is_an_error() {
        let mut gt = GroundTruthSet::new();
        gt.add(1, BBox::new(0., 0., 5., 5.), 0);
        assert!(matches!(
            evaluate(&[det(9, BBox::new(0., 0., 5., 5.), 0.5)], &gt),
            Err(Error::UnknownImage(9))
        ));
    }

    #[test]
    fn thresholds_and_buckets() {
        let t = iou_thresholds();
        assert!((t[0] - 0.5).abs() < 1e-15 && (t[9] - 0.95).abs() < 1e-12);
        assert!(AreaRange::Small.contains(1023.0));
        assert!(AreaRange::Medium.contains(1024.0));
        assert!(AreaRange::Medium.contains(9216.0));
        assert!(AreaRange::Large.contains(9216.5));
    }

    #[test]
    fn interpolation_envelope() {
        // P/R: (0, 0), (0.5, 1) → envelope 0.5 everywhere
        assert_eq!(interpolated_ap(&[0.0, 0.5], &[0.0, 1.0]), 0.5);
        assert_eq!(interpolated_ap(&[], &[]), 0.0);
        // recall stops at 0.5 with precision 1 → 51 of 101 points
        assert!((interpolated_ap(&[1.0], &[0.5]) - 51.0 / 101.0).abs() < 1e-15);
    }
}
