use bofkit::evolve::kmeans_anchors;
use bofkit::featuremap::{dropblock_mask, spp, FeatureMap};
use bofkit::geometry::{diou, iou, shape_iou, BBox};
use bofkit::nms::{diou_nms, greedy_nms, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn raster_iou(a: &BBox, b: &BBox) -> f64 {
    let inside = |r: &BBox, x: i32, y: i32| {
        x as f64 >= r.x_min && (x + 1) as f64 <= r.x_max && y as f64 >= r.y_min && (y + 1) as f64 <= r.y_max
    };
    let (mut i, mut u) = (0, 0);
    for y in 0..40 {
        for x in 0..40 {
            let (p, q) = (inside(a, x, y), inside(b, x, y));
            i += (p && q) as u32;
            u += (p || q) as u32;
        }
    }
    i as f64 / u as f64
}

/// Integer pair with IoU just above 0.5 whose DIoU falls below it: the
/// shifted same-size pair closest to (IoU 0.55, DIoU 0.48).
#[test]
fn diou_nms_keeps_offset_pair_that_greedy_merges() {
    let mut best: Option<(f64, BBox, BBox)> = None;
    for w in 1..=20 {
        for h in 1..=20 {
            let a = BBox::new(0.0, 0.0, w as f64, h as f64);
            for dx in -10..=10 {
                for dy in -10..=10 {
                    let b = a.translate(dx as f64, dy as f64);
                    let (i, d) = (iou(&a, &b), diou(&a, &b));
                    if i > 0.5 && d <= 0.5 {
                        let cost = (i - 0.55).abs() + (d - 0.48).abs();
                        if best.is_none_or(|(c, _, _)| cost < c) {
                            best = Some((cost, a, b));
                        }
                    }
                }
            }
        }
    }
    let (_, a, b) = best.expect("a qualifying pair exists");
    // rasterization needs non-negative coordinates
    let (a, b) = (a.translate(10.0, 10.0), b.translate(10.0, 10.0));
    let i = iou(&a, &b);
    assert!((i - raster_iou(&a, &b)).abs() < 1e-12);
    assert!((i - 0.55).abs() < 0.02 && (diou(&a, &b) - 0.48).abs() < 0.02, "iou {i} diou {}", diou(&a, &b));

    let dets = [Detection::new(a, 0.9, 0), Detection::new(b, 0.8, 0)];
    assert_eq!(greedy_nms(&dets, 0.5).len(), 1);
    assert_eq!(diou_nms(&dets, 0.5).len(), 2);
}

#[test]
fn dropblock_keeps_about_the_requested_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let draws = 100;
    let mean = (0..draws)
        .map(|_| dropblock_mask(100, 100, 5, 0.9, &mut rng).unwrap().kept_fraction())
        .sum::<f64>()
        / draws as f64;
    assert!((mean - 0.9).abs() <= 0.03, "mean kept fraction {mean}");
}

#[test]
fn dropblock_block_one_is_plain_dropout() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = dropblock_mask(200, 200, 1, 0.8, &mut rng).unwrap();
    assert!((m.kept_fraction() - 0.8).abs() < 0.01);
    // neighbours are independent: the drop rate next to a dropped cell matches the base rate
    let (mut pairs, mut both) = (0usize, 0usize);
    for y in 0..200 {
        for x in 0..199 {
            if !m.keep[y * 200 + x] {
                pairs += 1;
                both += !m.keep[y * 200 + x + 1] as usize;
            }
        }
    }
    assert!((both as f64 / pairs as f64 - 0.2).abs() < 0.02);
}

#[test]
fn spp_impulse_fills_the_window() {
    let mut v = vec![0.0; 25];
    v[12] = 1.0;
    let out = spp(&FeatureMap::new(1, 5, 5, v).unwrap(), &[5]).unwrap();
    assert!(out.values().iter().all(|&x| x == 1.0));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn kmeans_matches_exhaustive_two_way_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut boxes = Vec::new();
    for (cw, ch) in [(10.0, 10.0), (50.0, 30.0)] {
        for _ in 0..7 {
            boxes.push((cw * rng.random_range(0.95..1.05), ch * rng.random_range(0.95..1.05)));
        }
    }

    // exhaustive oracle over every 2-way assignment
    let n = boxes.len();
    let mut best: Option<(f64, [(f64, f64); 2])> = None;
    for mask in 1u32..(1 << n) - 1 {
        let mut centers = [(0.0, 0.0); 2];
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = (0..n).filter(|&i| ((mask >> i) & 1) as usize == c).map(|i| boxes[i]).collect();
            *center = (median(members.iter().map(|b| b.0).collect()), median(members.iter().map(|b| b.1).collect()));
        }
        let cost: f64 = (0..n)
            .map(|i| {
                let c = centers[((mask >> i) & 1) as usize];
                1.0 - shape_iou(boxes[i].0, boxes[i].1, c.0, c.1)
            })
            .sum();
        if best.is_none_or(|(b, _)| cost < b) {
            best = Some((cost, centers));
        }
    }
    let (_, mut oracle) = best.unwrap();
    oracle.sort_by(|a, b| (a.0 * a.1).partial_cmp(&(b.0 * b.1)).unwrap());

    let got = kmeans_anchors(&boxes, 2, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for (a, o) in got.anchors.iter().zip(oracle) {
        assert!((a.w / o.0 - 1.0).abs() <= 0.05 && (a.h / o.1 - 1.0).abs() <= 0.05, "{a:?} vs {o:?}");
    }
    let expect = [
        (median(boxes[..7].iter().map(|b| b.0).collect()), median(boxes[..7].iter().map(|b| b.1).collect())),
        (median(boxes[7..].iter().map(|b| b.0).collect()), median(boxes[7..].iter().map(|b| b.1).collect())),
    ];
    for (a, e) in got.anchors.iter().zip(expect) {
        assert!((a.w / e.0 - 1.0).abs() <= 0.05 && (a.h / e.1 - 1.0).abs() <= 0.05, "{a:?} vs {e:?}");
    }
}

#[test]
fn kmeans_with_one_anchor_per_box_is_exact() {
    let boxes = [(3.0, 4.0), (10.0, 2.0), (7.0, 7.0), (1.0, 9.0)];
    let r = kmeans_anchors(&boxes, 4, 20, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(*r.distance_history.last().unwrap(), 0.0);
    let mut shapes: Vec<(f64, f64)> = r.anchors.iter().map(|a| (a.w, a.h)).collect();
    shapes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut want = boxes.to_vec();
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(shapes, want);
}
