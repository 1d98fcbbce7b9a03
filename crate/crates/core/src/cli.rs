//! `bofkit` command-line front end.
//!
//! Every subcommand is a pure function of its flags, its input files and
//! `--seed`. Human-readable output is the default; `--json` switches to
//! machine-readable output.

use crate::augment::{
    self, Label, MosaicConfig, MosaicScaling, PhotometricParams, Sample,
};
use crate::decode::DEFAULT_ASSIGN_IOU_THRESHOLD;
use crate::evalap::{self, EvalResult, ImageDetection};
use crate::evolve::{self, anchor_fit, AnchorFit, GaConfig};
use crate::geometry::BBox;
use crate::ingest::{self, Annotation, DatasetIndex, ImageInfo};
use crate::nms::{self, Detection, SoftNmsMode, SoftNmsParams};
use crate::trainsched;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "bofkit", version, about = "Detector training and post-processing toolkit")]
pub struct Cli {
    /// Emit JSON instead of tables/CSV.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster annotation box shapes into anchors.
    OptimizeAnchors(OptimizeAnchorsArgs),
    /// Compute COCO-style AP for a detections file.
    Eval(EvalArgs),
    /// Write augmented images and annotations.
    Augment(AugmentArgs),
    /// Time the NMS variants on random detections.
    BenchNms(BenchNmsArgs),
    /// Print a learning-rate schedule as CSV.
    Schedule(ScheduleArgs),
}

#[derive(Debug, clap::Args)]
pub struct OptimizeAnchorsArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub k: usize,
    /// Square network input resolution the boxes are rescaled to.
    #[arg(long, default_value_t = 512)]
    pub resolution: u32,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Refine the k-means anchors with the genetic search.
    #[arg(long)]
    pub evolve: bool,
    #[arg(long, default_value_t = 100)]
    pub generations: usize,
    #[arg(long, default_value_t = 10)]
    pub population: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NmsChoice {
    None,
    Greedy,
    Soft,
    Diou,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// COCO results JSON.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value_t = NmsChoice::None)]
    pub nms: NmsChoice,
    #[arg(long, default_value_t = 0.45)]
    pub nms_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub soft_sigma: f64,
    #[arg(long, value_enum, default_value_t = SoftModeArg::Gaussian)]
    pub soft_mode: SoftModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SoftModeArg {
    Linear,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentOp {
    Mosaic,
    Mixup,
    Cutmix,
    Photometric,
    Blur,
}

#[derive(Debug, clap::Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub images_dir: PathBuf,
    #[arg(long, value_enum)]
    pub op: AugmentOp,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Mosaic canvas width (defaults to the first image's width).
    #[arg(long)]
    pub width: Option<usize>,
    /// Mosaic canvas height (defaults to the first image's height).
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, value_enum, default_value_t = ScalingArg::Stretch)]
    pub mosaic_scaling: ScalingArg,
    /// Fixed MixUp ratio; drawn uniformly per pair when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub blur_radius: usize,
    #[arg(long, default_value_t = 0.1)]
    pub brightness: f64,
    #[arg(long, default_value_t = 1.2)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.015)]
    pub hue: f64,
    #[arg(long, default_value_t = 1.5)]
    pub saturation: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = augment::DEFAULT_MIN_AREA_FRAC)]
    pub min_area_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScalingArg {
    Stretch,
    Cover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchVariant {
    All,
    Greedy,
    Soft,
    Diou,
}

#[derive(Debug, clap::Args)]
pub struct BenchNmsArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BenchVariant::All)]
    pub variant: BenchVariant,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    Cosine,
    Step,
}

#[derive(Debug, clap::Args)]
pub struct ScheduleArgs {
    #[arg(long, value_enum)]
    pub kind: ScheduleKind,
    #[arg(long, default_value_t = trainsched::DEFAULT_TOTAL_STEPS)]
    pub steps: u64,
    #[arg(long, default_value_t = trainsched::DEFAULT_LR)]
    pub lr_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lr_min: f64,
    #[arg(long, default_value_t = trainsched::DEFAULT_LR)]
    pub lr0: f64,
    #[arg(long, value_delimiter = ',', default_values_t = trainsched::DEFAULT_MILESTONES)]
    pub milestones: Vec<u64>,
    #[arg(long, default_value_t = trainsched::DEFAULT_DECAY_FACTOR)]
    pub factor: f64,
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::OptimizeAnchors(a) => optimize_anchors(a, cli.json, out),
        Command::Eval(a) => eval(a, cli.json, out),
        Command::Augment(a) => augment_cmd(a, cli.json, out),
        Command::BenchNms(a) => bench_nms(a, cli.json, out),
        Command::Schedule(a) => schedule(a, cli.json, out),
    }
}

/// Box shapes rescaled from each image to a square `resolution` input.
pub fn rescaled_shapes(index: &DatasetIndex, resolution: u32) -> Vec<(f64, f64)> {
    let sizes: BTreeMap<u64, &ImageInfo> = index.images.iter().map(|im| (im.id, im)).collect();
    let res = resolution as f64;
    index
        .annotations
        .iter()
        .filter_map(|a| {
            let im = sizes.get(&a.image_id)?;
            let w = a.bbox[2] / im.width as f64 * res;
            let h = a.bbox[3] / im.height as f64 * res;
            (w > 0.0 && h > 0.0).then_some((w, h))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct AnchorReport {
    resolution: u32,
    anchors: Vec<[f64; 2]>,
    fit: AnchorFit,
    #[serde(skip_serializing_if = "Option::is_none")]
    kmeans_fit: Option<AnchorFit>,
    boxes: usize,
}

fn optimize_anchors(a: &OptimizeAnchorsArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    if a.resolution == 0 {
        bail!("--resolution must be positive");
    }
    let index = ingest::load_annotations(&a.annotations)?;
    let shapes = rescaled_shapes(&index, a.resolution);
    if shapes.is_empty() {
        bail!("{} contains no boxes with positive size", a.annotations.display());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let km = evolve::kmeans_anchors(&shapes, a.k, a.iters, &mut rng)?;
    let km_fit = anchor_fit(&shapes, &km.anchors, DEFAULT_ASSIGN_IOU_THRESHOLD);

    let (anchors, fit, kmeans_fit) = if a.evolve {
        let cfg = GaConfig {
            population: a.population,
            generations: a.generations,
            seed: a.seed,
            ..Default::default()
        };
        let (evolved, _) = evolve::evolve_anchors(&shapes, &km.anchors, a.resolution as f64, &cfg)?;
        let fit = anchor_fit(&shapes, &evolved, DEFAULT_ASSIGN_IOU_THRESHOLD);
        (evolved, fit, Some(km_fit))
    } else {
        (km.anchors, km_fit, None)
    };

    let report = AnchorReport {
        resolution: a.resolution,
        anchors: anchors.iter().map(|x| [x.w, x.h]).collect(),
        fit,
        kmeans_fit,
        boxes: shapes.len(),
    };
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        return Ok(());
    }
    writeln!(out, "# {} anchors for {}x{} input, sorted by area", anchors.len(), a.resolution, a.resolution)?;
    for x in &anchors {
        writeln!(out, "{:.2},{:.2}", x.w, x.h)?;
    }
    if let Some(k) = kmeans_fit {
        writeln!(out, "# k-means mean best IoU: {:.4}, recall@{}: {:.4}", k.mean_best_iou, k.threshold, k.recall)?;
    }
    writeln!(out, "# boxes: {}", shapes.len())?;
    writeln!(out, "# mean best IoU: {:.4}", fit.mean_best_iou)?;
    writeln!(out, "# recall@{}: {:.4}", fit.threshold, fit.recall)?;
    Ok(())
}

/// Applies the selected suppression per image, keeping image-id order.
pub fn apply_nms(dets: &[ImageDetection], choice: NmsChoice, threshold: f64, soft: &SoftNmsParams) -> Vec<ImageDetection> {
    if choice == NmsChoice::None {
        return dets.to_vec();
    }
    let mut by_image: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        by_image.entry(d.image_id).or_default().push(d.det);
    }
    by_image
        .into_iter()
        .flat_map(|(image_id, ds)| {
            let kept = match choice {
                NmsChoice::Greedy => nms::greedy_nms(&ds, threshold),
                NmsChoice::Diou => nms::diou_nms(&ds, threshold),
                NmsChoice::Soft => nms::soft_nms(&ds, soft),
                NmsChoice::None => unreachable!(),
            };
            kept.into_iter().map(move |det| ImageDetection { image_id, det })
        })
        .collect()
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn format_eval_table(r: &EvalResult) -> String {
    let header: Vec<String> = EvalResult::COLUMNS.iter().map(|c| format!("{c:>8}")).collect();
    let row: Vec<String> = r.values().iter().map(|v| format!("{:>8}", fmt_metric(*v))).collect();
    format!("{}\n{}\n", header.join(" "), row.join(" "))
}

fn eval(a: &EvalArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let index = ingest::load_annotations(&a.annotations)?;
    let dets = ingest::load_detections(&a.detections)?;
    let soft = SoftNmsParams {
        iou_threshold: a.nms_threshold,
        sigma: a.soft_sigma,
        mode: match a.soft_mode {
            SoftModeArg::Linear => SoftNmsMode::Linear,
            SoftModeArg::Gaussian => SoftNmsMode::Gaussian,
        },
        ..Default::default()
    };
    let dets = apply_nms(&dets, a.nms, a.nms_threshold, &soft);
    let result = evalap::evaluate(&dets, &index.ground_truth())?;
    if json {
        writeln!(out, "{}", serde_json::to_string(&result)?)?;
    } else {
        write!(out, "{}", format_eval_table(&result))?;
    }
    Ok(())
}

fn load_samples(index: &DatasetIndex, images_dir: &Path) -> Result<Vec<(u64, Sample)>> {
    let mut images: Vec<&ImageInfo> = index.images.iter().collect();
    images.sort_by_key(|im| im.id);
    let missing: Vec<String> = images
        .iter()
        .map(|im| images_dir.join(&im.file_name))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing image files:\n  {}", missing.join("\n  "));
    }
    images
        .into_iter()
        .map(|im| {
            let path = images_dir.join(&im.file_name);
            let image = ingest::load_image(&path)?;
            let bounds = image.bounds();
            let labels = index
                .annotations_for(im.id)
                .filter_map(|a| {
                    let b = a.to_box().clip(&bounds);
                    (b.area() > 0.0).then(|| Label {
                        bbox: b,
                        class_id: a.category_id,
                        weight: a.weight.unwrap_or(1.0),
                    })
                })
                .collect();
            let sample = Sample::new(image, labels).with_context(|| format!("image {}", im.id))?;
            Ok((im.id, sample))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct AugmentSummary {
    op: String,
    seed: u64,
    outputs: usize,
    annotations: usize,
    out_dir: String,
}

fn augment_cmd(a: &AugmentArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let index = ingest::load_annotations(&a.annotations)?;
    let samples = load_samples(&index, &a.images_dir)?;
    if samples.is_empty() {
        bail!("dataset has no images");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let outputs: Vec<Sample> = match a.op {
        AugmentOp::Mosaic => {
            let w = a.width.unwrap_or(samples[0].1.image.width());
            let h = a.height.unwrap_or(samples[0].1.image.height());
            let cfg = MosaicConfig {
                min_area_frac: a.min_area_frac,
                scaling: match a.mosaic_scaling {
                    ScalingArg::Stretch => MosaicScaling::Stretch,
                    ScalingArg::Cover => MosaicScaling::Cover,
                },
                ..Default::default()
            };
            let group: Vec<Sample> = samples.iter().map(|s| s.1.clone()).collect();
            if group.len() < 4 {
                bail!("mosaic needs at least 4 images, dataset has {}", group.len());
            }
            group
                .chunks_exact(4)
                .map(|g| augment::mosaic(g, w, h, &cfg, &mut rng))
                .collect::<crate::Result<_>>()?
        }
        AugmentOp::Mixup | AugmentOp::Cutmix => {
            if samples.len() < 2 {
                bail!("{:?} needs at least 2 images", a.op);
            }
            let mut v = Vec::new();
            for pair in samples.chunks_exact(2) {
                let x = &pair[0].1;
                // the partner is stretched to the first image's size
                let y = &augment::resize(&pair[1].1, x.image.width(), x.image.height())?;
                let s = if a.op == AugmentOp::Mixup {
                    let lambda = match a.lambda {
                        Some(l) => l,
                        None => rng.random_range(0.0..=1.0),
                    };
                    augment::mixup(x, y, lambda)
                } else {
                    augment::cutmix(x, y, &mut rng)
                };
                v.push(s.with_context(|| format!("images {} and {}", pair[0].0, pair[1].0))?);
            }
            v
        }
        AugmentOp::Photometric => samples
            .iter()
            .map(|(_, s)| {
                let p = PhotometricParams::sample(&mut rng, a.brightness, a.contrast, a.hue, a.saturation, a.noise);
                augment::photometric(s, &p, &mut rng)
            })
            .collect::<crate::Result<_>>()?,
        AugmentOp::Blur => samples.iter().map(|(_, s)| augment::blur(s, a.blur_radius)).collect(),
    };

    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut result = DatasetIndex {
        categories: index.categories.clone(),
        ..Default::default()
    };
    let mut next_ann = 1u64;
    for (i, s) in outputs.iter().enumerate() {
        let id = i as u64 + 1;
        let file_name = format!("aug_{id:05}.ppm");
        ingest::save_image(&s.image, a.out_dir.join(&file_name))?;
        result.images.push(ImageInfo {
            id,
            file_name,
            width: s.image.width() as u32,
            height: s.image.height() as u32,
        });
        for l in &s.labels {
            result.annotations.push(Annotation {
                id: next_ann,
                image_id: id,
                bbox: l.bbox.to_xywh(),
                category_id: l.class_id,
                weight: (l.weight != 1.0).then_some(l.weight),
            });
            next_ann += 1;
        }
    }
    result.validate()?;
    ingest::save_annotations(&result, a.out_dir.join("annotations.json"))?;

    let summary = AugmentSummary {
        op: format!("{:?}", a.op).to_lowercase(),
        seed: a.seed,
        outputs: outputs.len(),
        annotations: result.annotations.len(),
        out_dir: a.out_dir.display().to_string(),
    };
    if json {
        writeln!(out, "{}", serde_json::to_string(&summary)?)?;
    } else {
        writeln!(
            out,
            "{}: wrote {} images and {} annotations to {}",
            summary.op, summary.outputs, summary.annotations, summary.out_dir
        )?;
    }
    Ok(())
}

/// Seeded random detections on a 1024×1024 canvas over 8 classes.
pub fn random_detections(n: usize, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w = rng.random_range(16.0..128.0);
            let h = rng.random_range(16.0..128.0);
            let x = rng.random_range(0.0..1024.0 - w);
            let y = rng.random_range(0.0..1024.0 - h);
            let score = rng.random_range(0.0..1.0);
            let class_id = rng.random_range(0..8);
            Detection::new(BBox::new(x, y, x + w, y + h), score, class_id)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct BenchRow {
    variant: &'static str,
    survivors: usize,
    millis: f64,
    /// "OK"/"MISMATCH" for greedy when cross-checked, "-" otherwise.
    oracle: String,
}

/// Largest input for which greedy NMS is cross-checked against the reference.
pub const BENCH_ORACLE_LIMIT: usize = 2000;

fn bench_nms(a: &BenchNmsArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let dets = random_detections(a.n, a.seed);
    let want = |v: BenchVariant| a.variant == BenchVariant::All || a.variant == v;
    let mut rows = Vec::new();
    if want(BenchVariant::Greedy) {
        let t = Instant::now();
        let kept = nms::greedy_nms(&dets, a.threshold);
        let millis = t.elapsed().as_secs_f64() * 1e3;
        let oracle = if a.n <= BENCH_ORACLE_LIMIT {
            if nms::greedy_nms_reference(&dets, a.threshold) == kept {
                "OK".to_string()
            } else {
                "MISMATCH".to_string()
            }
        } else {
            "-".to_string()
        };
        rows.push(BenchRow {
            variant: "greedy",
            survivors: kept.len(),
            millis,
            oracle,
        });
    }
    if want(BenchVariant::Soft) {
        let params = SoftNmsParams {
            iou_threshold: a.threshold,
            ..Default::default()
        };
        let t = Instant::now();
        let kept = nms::soft_nms(&dets, &params);
        rows.push(BenchRow {
            variant: "soft",
            survivors: kept.len(),
            millis: t.elapsed().as_secs_f64() * 1e3,
            oracle: "-".into(),
        });
    }
    if want(BenchVariant::Diou) {
        let t = Instant::now();
        let kept = nms::diou_nms(&dets, a.threshold);
        rows.push(BenchRow {
            variant: "diou",
            survivors: kept.len(),
            millis: t.elapsed().as_secs_f64() * 1e3,
            oracle: "-".into(),
        });
    }
    if rows.iter().any(|r| r.oracle == "MISMATCH") {
        bail!("greedy NMS disagrees with the reference implementation");
    }
    if json {
        writeln!(out, "{}", serde_json::to_string(&rows)?)?;
    } else {
        writeln!(out, "{:<8} {:>9} {:>10} {:>6}", "variant", "survivors", "ms", "oracle")?;
        for r in &rows {
            writeln!(out, "{:<8} {:>9} {:>10.3} {:>6}", r.variant, r.survivors, r.millis, r.oracle)?;
        }
    }
    Ok(())
}

/// `(step, lr)` for every step in `0..=steps`.
pub fn schedule_rows(a: &ScheduleArgs) -> Result<Vec<(u64, f64)>> {
    let mut milestones = a.milestones.clone();
    milestones.sort_unstable();
    (0..=a.steps)
        .map(|t| {
            Ok((
                t,
                match a.kind {
                    ScheduleKind::Cosine => trainsched::cosine_lr(t, a.steps, a.lr_max, a.lr_min)?,
                    ScheduleKind::Step => trainsched::step_decay_lr(t, &milestones, a.lr0, a.factor),
                },
            ))
        })
        .collect()
}

fn schedule(a: &ScheduleArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let rows = schedule_rows(a)?;
    let mut text = String::new();
    if json {
        #[derive(Serialize)]
        struct Row {
            step: u64,
            lr: f64,
        }
        let v: Vec<Row> = rows.iter().map(|&(step, lr)| Row { step, lr }).collect();
        text = serde_json::to_string(&v)? + "\n";
    } else {
        use std::fmt::Write as _;
        text.push_str("step,lr\n");
        for (t, lr) in rows {
            let _ = writeln!(text, "{t},{lr}");
        }
    }
    match &a.out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> Result<String> {
        let cli = Cli::try_parse_from(std::iter::once("bofkit").chain(args.iter().copied()))?;
        let mut buf = Vec::new();
        run(&cli, &mut buf)?;
        Ok(String::from_utf8(buf)?)
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let csv = run_args(&["schedule", "--kind", "cosine", "--steps", "100", "--lr-max", "0.01", "--lr-min", "0.001"]).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 101);
        assert_eq!(rows[0], "0,0.01");
        let last: f64 = rows[100].split(',').nth(1).unwrap().parse().unwrap();
        assert!((last - 0.001).abs() < 1e-15);
    }

    #[test]
    fn bench_single_detection() {
        let out = run_args(&["--json", "bench-nms", "--n", "1"]).unwrap();
        let rows: serde_json::Value = serde_json::from_str(&out).unwrap();
        for r in rows.as_array().unwrap() {
            assert_eq!(r["survivors"], 1);
        }
    }

    #[test]
    fn bench_rejects_zero() {
        assert!(run_args(&["bench-nms", "--n", "0"]).is_err());
    }
}
