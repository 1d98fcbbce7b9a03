//! Non-maximum suppression: greedy, soft (linear/gaussian) and DIoU variants.
//!
//! All variants work class-wise: detections with different `class_id`s never
//! interact. Ordering is by descending score; ties go to the detection that
//! appeared first in the input, so every variant is deterministic.

use crate::geometry::{diou, iou, BBox};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// Default floor below which soft-NMS drops a decayed detection.
pub const DEFAULT_SCORE_FLOOR: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, class_id: u32) -> Self {
        Self {
            bbox,
            score,
            class_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftNmsMode {
    Linear,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftNmsParams {
    pub iou_threshold: f64,
    pub sigma: f64,
    pub score_floor: f64,
    pub mode: SoftNmsMode,
}

impl Default for SoftNmsParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            sigma: 0.5,
            score_floor: DEFAULT_SCORE_FLOOR,
            mode: SoftNmsMode::Gaussian,
        }
    }
}

fn by_score_then_index(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Input indices grouped by class, each group sorted by descending score.
fn class_buckets(dets: &[Detection]) -> BTreeMap<u32, Vec<usize>> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut buckets: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        buckets.entry(d.class_id).or_default().push(i);
    }
    for idx in buckets.values_mut() {
        idx.sort_by(by_score_then_index(&scores));
    }
    buckets
}

/// Greedy suppression driven by an arbitrary overlap criterion. Returns the
/// surviving input indices in output order.
fn greedy_by<F>(dets: &[Detection], suppresses: F) -> Vec<usize>
where
    F: Fn(&BBox, &BBox) -> bool,
{
    let mut kept = Vec::new();
    for order in class_buckets(dets).into_values() {
        let mut alive = vec![true; order.len()];
        for i in 0..order.len() {
            if !alive[i] {
                continue;
            }
            let keep = &dets[order[i]].bbox;
            kept.push(order[i]);
            for j in (i + 1)..order.len() {
                if alive[j] && suppresses(keep, &dets[order[j]].bbox) {
                    alive[j] = false;
                }
            }
        }
    }
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    kept.sort_by(by_score_then_index(&scores));
    kept
}

/// Classic NMS: within each class, keep the best remaining detection and
/// discard everything overlapping it with IoU above `iou_threshold`.
pub fn greedy_nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    greedy_by(dets, |a, b| iou(a, b) > iou_threshold)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

/// Same as [`greedy_nms`] but returns the indices of the survivors.
pub fn greedy_nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    greedy_by(dets, |a, b| iou(a, b) > iou_threshold)
}

/// NMS whose suppression test is `diou(kept, candidate) > threshold`.
pub fn diou_nms(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    greedy_by(dets, |a, b| diou(a, b) > threshold)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

/// Straight quadratic greedy NMS used to cross-check [`greedy_nms`].
///
/// Walks every detection in global score order and keeps it unless a
/// previously kept detection of the same class overlaps it above the threshold.
pub fn greedy_nms_reference(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Soft-NMS: overlapping detections have their scores decayed instead of
/// being discarded outright.
///
/// * linear: `s ← s·(1 − iou)` when `iou > iou_threshold`
/// * gaussian: `s ← s·exp(−iou²/σ)` for every pair
///
/// Detections whose score drops below `score_floor` are removed. The output
/// carries the decayed scores, sorted in descending order.
pub fn soft_nms(dets: &[Detection], params: &SoftNmsParams) -> Vec<Detection> {
    let mut out: Vec<(usize, Detection)> = Vec::new();
    for order in class_buckets(dets).into_values() {
        let mut pending: Vec<(usize, Detection)> = order
            .into_iter()
            .map(|i| (i, dets[i]))
            .filter(|(_, d)| d.score >= params.score_floor)
            .collect();
        while !pending.is_empty() {
            let best = pending
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    b.1.score
                        .partial_cmp(&a.1.score)
                        .unwrap_or(Ordering::Equal)
                        .then(a.0.cmp(&b.0))
                })
                .map(|(pos, _)| pos)
                .expect("non-empty");
            let (idx, top) = pending.swap_remove(best);
            for (_, d) in pending.iter_mut() {
                let overlap = iou(&top.bbox, &d.bbox);
                match params.mode {
                    SoftNmsMode::Linear => {
                        if overlap > params.iou_threshold {
                            d.score *= 1.0 - overlap;
                        }
                    }
                    SoftNmsMode::Gaussian => {
                        d.score *= (-(overlap * overlap) / params.sigma).exp();
                    }
                }
            }
            pending.retain(|(_, d)| d.score >= params.score_floor);
            out.push((idx, top));
        }
    }
    out.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    out.into_iter().map(|(_, d)| d).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, s: f64, c: u32) -> Detection {
        Detection::new(BBox::new(x0, y0, x1, y1), s, c)
    }

    #[test]
    fn greedy_examples() {
        let one = [det(0., 0., 1., 1., 0.5, 0)];
        assert_eq!(greedy_nms(&one, 0.5), one.to_vec());

        let low_overlap = [det(0., 0., 2., 2., 0.9, 0), det(1., 1., 3., 3., 0.8, 0)];
        assert_eq!(greedy_nms(&low_overlap, 0.5).len(), 2);

        let high_overlap = [det(0., 0., 2., 2., 0.9, 0), det(0., 0.5, 2., 2.5, 0.8, 0)];
        let kept = greedy_nms(&high_overlap, 0.5);
        assert_eq!(kept, vec![high_overlap[0]]);
        assert!(greedy_nms(&[], 0.5).is_empty());
    }

    #[test]
    fn classes_do_not_interact() {
        let dets = [det(0., 0., 2., 2., 0.9, 0), det(0., 0., 2., 2., 0.8, 1)];
        assert_eq!(greedy_nms(&dets, 0.5).len(), 2);
        assert_eq!(diou_nms(&dets, 0.5).len(), 2);
    }

    #[test]
    fn ties_keep_first_input() {
        let dets = [det(0., 0., 2., 2., 0.7, 0), det(0., 0., 2., 2., 0.7, 0)];
        let kept = greedy_nms_indices(&dets, 0.5);
        assert_eq!(kept, vec![0]);
    }

    #[test]
    fn soft_linear_example() {
        let dets = [det(0., 0., 2., 2., 0.9, 0), det(0., 0.5, 2., 2.5, 0.8, 0)];
        let params = SoftNmsParams {
            iou_threshold: 0.5,
            mode: SoftNmsMode::Linear,
            ..Default::default()
        };
        let out = soft_nms(&dets, &params);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.32).abs() < 1e-12);
    }

    #[test]
    fn soft_disjoint_and_infinite_sigma() {
        let dets = [det(0., 0., 1., 1., 0.9, 0), det(5., 5., 6., 6., 0.4, 0)];
        let linear = SoftNmsParams {
            mode: SoftNmsMode::Linear,
            ..Default::default()
        };
        let out = soft_nms(&dets, &linear);
        assert_eq!(out.iter().map(|d| d.score).collect::<Vec<_>>(), vec![0.9, 0.4]);

        let overlapping = [det(0., 0., 2., 2., 0.9, 0), det(0., 0.5, 2., 2.5, 0.8, 0)];
        let wide = SoftNmsParams {
            sigma: 1e9,
            mode: SoftNmsMode::Gaussian,
            ..Default::default()
        };
        let out = soft_nms(&overlapping, &wide);
        assert!((out[1].score - 0.8).abs() < 1e-6);
    }

    #[test]
    fn soft_drops_below_floor() {
        let dets = [det(0., 0., 2., 2., 0.9, 0), det(0., 0., 2., 2., 0.5, 0)];
        let params = SoftNmsParams {
            mode: SoftNmsMode::Linear,
            iou_threshold: 0.5,
            ..Default::default()
        };
        // iou = 1 → decayed to 0, below the floor
        assert_eq!(soft_nms(&dets, &params).len(), 1);
    }

    #[test]
    fn diou_examples() {
        let same = [det(0., 0., 2., 2., 0.9, 0), det(0., 0., 2., 2., 0.8, 0)];
        assert_eq!(diou_nms(&same, 0.99).len(), 1);
        assert!(diou_nms(&[], 0.5).is_empty());
    }

    // A suppresses B only under IoU; B survives DIoU and then suppresses C.
    #[test]
    fn diou_survivors_need_not_contain_greedy_survivors() {
        let a = det(0., 0., 10., 10., 0.9, 0);
        let b = det(5., 0., 15., 10., 0.8, 0);
        let c = det(8., 0., 18., 10., 0.7, 0);
        let dets = [a, b, c];
        assert_eq!(greedy_nms(&dets, 0.3), vec![a, c]);
        assert_eq!(diou_nms(&dets, 0.3), vec![a, b]);
    }
}
