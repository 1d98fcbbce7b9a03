use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bofkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bofkit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn dataset(boxes: &[[f64; 4]]) -> Value {
    let anns: Vec<Value> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| json!({"id": i + 1, "image_id": 1, "bbox": b, "category_id": 1}))
        .collect();
    json!({
        "images": [{"id": 1, "file_name": "a.ppm", "width": 512, "height": 512}],
        "annotations": anns,
        "categories": [{"id": 1, "name": "thing"}]
    })
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn optimize_anchors_emits_k_sorted_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let boxes: Vec<[f64; 4]> = (0..60)
        .map(|i| [0.0, 0.0, 5.0 + (i * 7 % 97) as f64, 4.0 + (i * 13 % 89) as f64])
        .collect();
    let ann = write_json(dir.path(), "a.json", &dataset(&boxes));
    let text = stdout(&bofkit(&["optimize-anchors", "--annotations", p(&ann), "--k", "9"]));
    let anchors: Vec<(f64, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (w, h) = l.split_once(',').unwrap();
            (w.parse().unwrap(), h.parse().unwrap())
        })
        .collect();
    assert_eq!(anchors.len(), 9);
    assert!(anchors.windows(2).all(|w| w[0].0 * w[0].1 <= w[1].0 * w[1].1 + 1e-6));
    assert!(text.contains("recall@0.213"));
}

#[test]
fn optimize_anchors_identical_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_json(dir.path(), "a.json", &dataset(&[[3.0, 4.0, 40.0, 25.0]; 10]));
    let v: Value = serde_json::from_str(&stdout(&bofkit(&["--json", "optimize-anchors", "--annotations", p(&ann), "--k", "1"]))).unwrap();
    assert_eq!(v["anchors"], json!([[40.0, 25.0]]));
    assert_eq!(v["fit"]["recall"], json!(1.0));
}

#[test]
fn evolve_never_lowers_recall() {
    let dir = tempfile::tempdir().unwrap();
    let boxes: Vec<[f64; 4]> = (0..200)
        .map(|i| [0.0, 0.0, 4.0 + (i * 37 % 300) as f64, 4.0 + (i * 53 % 280) as f64])
        .collect();
    let ann = write_json(dir.path(), "a.json", &dataset(&boxes));
    for seed in ["0", "1", "2"] {
        let out = stdout(&bofkit(&[
            "--json", "optimize-anchors", "--annotations", p(&ann), "--k", "3", "--evolve", "--generations", "30", "--seed", seed,
        ]));
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!(v["fit"]["recall"].as_f64().unwrap() >= v["kmeans_fit"]["recall"].as_f64().unwrap());
    }
}

fn eval_fixture(dir: &Path) -> (PathBuf, Vec<Value>) {
    // one small, one medium and one large object so every bucket is populated
    let gts = [[10.0, 10.0, 20.0, 20.0], [100.0, 100.0, 60.0, 60.0], [200.0, 200.0, 150.0, 120.0]];
    let ann = write_json(dir, "gt.json", &dataset(&gts));
    let dets = gts
        .iter()
        .enumerate()
        .map(|(i, b)| json!({"image_id": 1, "category_id": 1, "bbox": b, "score": 0.9 - 0.1 * i as f64}))
        .collect();
    (ann, dets)
}

#[test]
fn eval_perfect_detections_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, dets) = eval_fixture(dir.path());
    let det = write_json(dir.path(), "d.json", &Value::Array(dets));
    let table = stdout(&bofkit(&["eval", "--detections", p(&det), "--annotations", p(&ann)]));
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap().split_whitespace().collect::<Vec<_>>(), ["AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"]);
    assert!(lines.next().unwrap().split_whitespace().all(|c| c == "1.0000"));

    let v: Value = serde_json::from_str(&stdout(&bofkit(&["--json", "eval", "--detections", p(&det), "--annotations", p(&ann)]))).unwrap();
    for k in ["AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"] {
        assert_eq!(v[k], json!(1.0), "{k}");
    }
}

#[test]
fn eval_greedy_nms_removes_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, dets) = eval_fixture(dir.path());
    let clean = write_json(dir.path(), "clean.json", &Value::Array(dets.clone()));
    let mut dup = dets.clone();
    for d in &dets {
        let mut d = d.clone();
        d["score"] = json!(d["score"].as_f64().unwrap() - 0.05);
        dup.push(d);
    }
    let dup = write_json(dir.path(), "dup.json", &Value::Array(dup));
    let run = |f: &Path, nms: &str| -> Value {
        serde_json::from_str(&stdout(&bofkit(&["--json", "eval", "--detections", p(f), "--annotations", p(&ann), "--nms", nms, "--nms-threshold", "0.5"]))).unwrap()
    };
    assert_eq!(run(&dup, "greedy"), run(&clean, "none"));
}

#[test]
fn diou_keeps_at_least_as_many_in_a_dense_scene() {
    use bofkit::cli::{apply_nms, NmsChoice};
    use bofkit::evalap::ImageDetection;
    use bofkit::geometry::BBox;
    use bofkit::nms::{Detection, SoftNmsParams};
    // a row of equal boxes, each shifted by 30% of its width from the previous
    let dets: Vec<ImageDetection> = (0..12)
        .map(|i| ImageDetection {
            image_id: 1,
            det: Detection::new(BBox::from_xywh(i as f64 * 6.0, 0.0, 20.0, 20.0), 1.0 - i as f64 * 0.01, 0),
        })
        .collect();
    let soft = SoftNmsParams::default();
    let g = apply_nms(&dets, NmsChoice::Greedy, 0.5, &soft).len();
    let d = apply_nms(&dets, NmsChoice::Diou, 0.5, &soft).len();
    assert!(d >= g, "diou {d} greedy {g}");
}

fn images_fixture(dir: &Path, n: usize, skip: &[usize]) -> (PathBuf, PathBuf) {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).unwrap();
    let mut images = Vec::new();
    let mut anns = Vec::new();
    for i in 0..n {
        let name = format!("im{i}.ppm");
        let (w, h) = (16 + i, 12 + 2 * i);
        if !skip.contains(&i) {
            let data: Vec<f32> = (0..w * h * 3).map(|k| ((k * 31 + i * 7) % 256) as f32 / 255.0).collect();
            let img = bofkit::augment::ImageTensor::new(w, h, data).unwrap();
            bofkit::ingest::save_image(&img, img_dir.join(&name)).unwrap();
        }
        images.push(json!({"id": i + 1, "file_name": name, "width": w, "height": h}));
        anns.push(json!({"id": i + 1, "image_id": i + 1, "bbox": [2.0, 2.0, 8.0, 6.0], "category_id": 1}));
    }
    let ann = write_json(dir, "ann.json", &json!({"images": images, "annotations": anns, "categories": [{"id": 1, "name": "x"}]}));
    (ann, img_dir)
}

#[test]
fn augment_mosaic_groups_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, imgs) = images_fixture(dir.path(), 4, &[]);
    let out = dir.path().join("out");
    stdout(&bofkit(&["augment", "--op", "mosaic", "--annotations", p(&ann), "--images-dir", p(&imgs), "--out-dir", p(&out)]));
    let index = bofkit::ingest::load_annotations(out.join("annotations.json")).unwrap();
    assert_eq!(index.images.len(), 1);
    let im = &index.images[0];
    let img = bofkit::ingest::load_image(out.join(&im.file_name)).unwrap();
    assert_eq!((img.width() as u32, img.height() as u32), (im.width, im.height));
    assert!(index.annotations.iter().all(|a| img.bounds().contains(&a.to_box())));
}

#[test]
fn augment_reports_every_missing_image() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, imgs) = images_fixture(dir.path(), 4, &[1, 3]);
    let o = bofkit(&["augment", "--op", "blur", "--annotations", p(&ann), "--images-dir", p(&imgs), "--out-dir", p(&dir.path().join("o"))]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("im1.ppm") && err.contains("im3.ppm") && !err.contains("im0.ppm"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn bench_nms_examples() {
    let one: Value = serde_json::from_str(&stdout(&bofkit(&["--json", "bench-nms", "--n", "1"]))).unwrap();
    assert!(one.as_array().unwrap().iter().all(|r| r["survivors"] == 1));
    let big: Value = serde_json::from_str(&stdout(&bofkit(&["--json", "bench-nms", "--n", "2000", "--variant", "greedy", "--seed", "9"]))).unwrap();
    assert_eq!(big[0]["oracle"], "OK");
    let again: Value = serde_json::from_str(&stdout(&bofkit(&["--json", "bench-nms", "--n", "2000", "--variant", "greedy", "--seed", "9"]))).unwrap();
    assert_eq!(big[0]["survivors"], again[0]["survivors"]);
    assert!(!bofkit(&["bench-nms", "--n", "0"]).status.success());
}

#[test]
fn schedule_examples() {
    let csv = stdout(&bofkit(&["schedule", "--kind", "cosine", "--steps", "100", "--lr-max", "0.02", "--lr-min", "0.001"]));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "step,lr");
    assert_eq!(rows.len(), 102);
    assert_eq!(rows[1], "0,0.02");
    assert_eq!(rows[101], "100,0.001");

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("step.csv");
    stdout(&bofkit(&["schedule", "--kind", "step", "--out", p(&out)]));
    let text = std::fs::read_to_string(&out).unwrap();
    let lr: Vec<f64> = text.lines().skip(1).map(|l| l.split_once(',').unwrap().1.parse().unwrap()).collect();
    assert_eq!(lr.len(), 500_501);
    let drops: Vec<usize> = (1..lr.len()).filter(|&t| lr[t] != lr[t - 1]).collect();
    assert_eq!(drops, [400_000, 450_000]);
}

#[test]
fn errors_go_to_stderr_with_nonzero_exit() {
    let o = bofkit(&["eval", "--detections", "/nonexistent/d.json", "--annotations", "/nonexistent/a.json"]);
    assert!(!o.status.success());
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert!(!bofkit(&["schedule", "--kind", "cosine", "--steps", "0"]).status.success());
}
