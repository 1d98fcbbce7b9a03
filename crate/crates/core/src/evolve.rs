//! Mutation-based genetic hyperparameter search and IoU k-means anchors.

use crate::decode::{Anchor, DEFAULT_ASSIGN_IOU_THRESHOLD};
use crate::error::{Error, Result};
use crate::geometry::shape_iou;
use crate::losses::DEFAULT_LOSS_NORMALIZER;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Learning rate found by the genetic search.
pub const SEARCHED_LR: f64 = 0.00261;
/// Momentum found by the genetic search.
pub const SEARCHED_MOMENTUM: f64 = 0.949;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub name: String,
    pub value: f64,
    pub low: f64,
    pub high: f64,
    /// Standard deviation of the multiplicative mutation noise.
    pub mutate_scale: f64,
}

impl HyperParam {
    pub fn new(name: impl Into<String>, value: f64, low: f64, high: f64, mutate_scale: f64) -> Self {
        Self {
            name: name.into(),
            value,
            low,
            high,
            mutate_scale,
        }
    }
}

/// Named, bounded hyperparameters evolved together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperVector {
    pub params: Vec<HyperParam>,
}

impl HyperVector {
    pub fn new(params: Vec<HyperParam>) -> Result<Self> {
        let v = Self { params };
        v.validate()?;
        Ok(v)
    }

    /// The searched detector hyperparameters.
    pub fn detector_defaults() -> Self {
        Self {
            params: vec![
                HyperParam::new("lr", SEARCHED_LR, 1e-5, 1e-1, 0.2),
                HyperParam::new("momentum", SEARCHED_MOMENTUM, 0.6, 0.98, 0.05),
                HyperParam::new("iou_threshold", DEFAULT_ASSIGN_IOU_THRESHOLD, 0.1, 0.7, 0.2),
                HyperParam::new("loss_normalizer", DEFAULT_LOSS_NORMALIZER, 0.01, 1.0, 0.2),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.params {
            let finite = p.value.is_finite() && p.low.is_finite() && p.high.is_finite();
            if !finite || p.low > p.high || p.value < p.low || p.value > p.high {
                return Err(Error::invalid(format!(
                    "hyperparameter '{}' = {} outside [{}, {}]",
                    p.name, p.value, p.low, p.high
                )));
            }
            if !(p.mutate_scale >= 0.0) {
                return Err(Error::invalid(format!(
                    "hyperparameter '{}' has negative mutation scale",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    pub fn in_bounds(&self) -> bool {
        self.params.iter().all(|p| p.low <= p.value && p.value <= p.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    /// Candidates evaluated per generation.
    pub population: usize,
    pub generations: usize,
    /// Parents are drawn from this many best-so-far candidates.
    pub parent_pool: usize,
    /// Per-entry mutation probability.
    pub mutation_prob: f64,
    pub seed: u64,
    /// Hard cap on fitness evaluations, the seed evaluation included.
    pub max_evaluations: Option<usize>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 10,
            generations: 50,
            parent_pool: 5,
            mutation_prob: 0.8,
            seed: 0,
            max_evaluations: None,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<()> {
        if self.population == 0 || self.generations == 0 || self.parent_pool == 0 {
            return Err(Error::invalid(
                "population, generations and parent pool must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::invalid(format!(
                "mutation probability must be in [0, 1], got {}",
                self.mutation_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best fitness seen up to and including this generation.
    pub best: f64,
    /// Mean finite fitness of this generation's candidates.
    pub mean: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveResult {
    pub best: HyperVector,
    pub best_fitness: f64,
    /// Generation 0 is the seed evaluation.
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

/// Evolves `seed` to maximize `fitness`.
///
/// Each generation draws `population` children. A child copies a parent
/// chosen fitness-proportionally among the `parent_pool` best candidates so
/// far, then every entry mutates with probability `mutation_prob` as
/// `value · (1 + N(0, mutate_scale))`, clamped to its bounds. Non-finite
/// fitness values are discarded. The best candidate ever seen is returned.
pub fn evolve<F>(seed: &HyperVector, fitness: F, cfg: &GaConfig) -> Result<EvolveResult>
where
    F: Fn(&HyperVector) -> f64,
{
    seed.validate()?;
    cfg.validate()?;
    let budget = cfg.max_evaluations.unwrap_or(usize::MAX);
    if budget == 0 {
        return Err(Error::invalid("evaluation budget must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise: Vec<Option<Normal<f64>>> = seed
        .params
        .iter()
        .map(|p| (p.mutate_scale > 0.0).then(|| Normal::new(0.0, p.mutate_scale).expect("validated")))
        .collect();

    let seed_fit = fitness(seed);
    let mut evaluations = 1;
    // (fitness, insertion order, vector), sorted best first
    let mut pool: Vec<(f64, usize, HyperVector)> = Vec::new();
    let mut best: Option<(f64, HyperVector)> = None;
    if seed_fit.is_finite() {
        pool.push((seed_fit, 0, seed.clone()));
        best = Some((seed_fit, seed.clone()));
    } else {
        warn!("seed vector produced non-finite fitness {seed_fit}");
    }
    let mut history = vec![GenerationStats {
        generation: 0,
        best: best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0),
        mean: if seed_fit.is_finite() { seed_fit } else { f64::NAN },
        evaluations,
    }];

    for generation in 1..=cfg.generations {
        if evaluations >= budget {
            break;
        }
        let mut sum = 0.0;
        let mut finite = 0usize;
        for _ in 0..cfg.population {
            if evaluations >= budget {
                break;
            }
            let parent = select_parent(&pool, &mut rng).unwrap_or(seed);
            let mut child = parent.clone();
            for (p, dist) in child.params.iter_mut().zip(&noise) {
                // the uniform draw is always consumed so trajectories stay aligned
                let mutate = rng.random::<f64>() < cfg.mutation_prob;
                if let (true, Some(d)) = (mutate, dist) {
                    p.value = (p.value * (1.0 + d.sample(&mut rng))).clamp(p.low, p.high);
                }
            }
            let f = fitness(&child);
            evaluations += 1;
            if !f.is_finite() {
                warn!("discarding candidate with non-finite fitness {f}");
                continue;
            }
            sum += f;
            finite += 1;
            if best.as_ref().is_none_or(|b| f > b.0) {
                best = Some((f, child.clone()));
            }
            let order = evaluations;
            let at = pool
                .iter()
                .position(|(pf, _, _)| f > *pf)
                .unwrap_or(pool.len());
            pool.insert(at, (f, order, child));
            pool.truncate(cfg.parent_pool);
        }
        history.push(GenerationStats {
            generation,
            best: best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0),
            mean: if finite > 0 { sum / finite as f64 } else { f64::NAN },
            evaluations,
        });
    }

    let (best_fitness, best) = best.unwrap_or_else(|| (f64::NEG_INFINITY, seed.clone()));
    Ok(EvolveResult {
        best,
        best_fitness,
        history,
        evaluations,
    })
}

/// Fitness-proportional pick among the pool, weights shifted so the worst
/// member still has a small chance.
fn select_parent<'a, R: Rng>(pool: &'a [(f64, usize, HyperVector)], rng: &mut R) -> Option<&'a HyperVector> {
    if pool.is_empty() {
        return None;
    }
    let min = pool.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = pool.iter().map(|p| p.0 - min + 1e-6).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (w, p) in weights.iter().zip(pool) {
        if r < *w {
            return Some(&p.2);
        }
        r -= w;
    }
    pool.last().map(|p| &p.2)
}

/// Uniform random search inside the seed's bounds with `budget` evaluations.
/// Returns the best vector and its fitness.
pub fn random_search<F>(seed: &HyperVector, fitness: F, budget: usize, rng_seed: u64) -> Result<(HyperVector, f64)>
where
    F: Fn(&HyperVector) -> f64,
{
    seed.validate()?;
    if budget == 0 {
        return Err(Error::invalid("evaluation budget must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut best: Option<(HyperVector, f64)> = None;
    for _ in 0..budget {
        let mut v = seed.clone();
        for p in &mut v.params {
            p.value = if p.high > p.low { rng.random_range(p.low..=p.high) } else { p.low };
        }
        let f = fitness(&v);
        if f.is_finite() && best.as_ref().is_none_or(|b| f > b.1) {
            best = Some((v, f));
        }
    }
    best.ok_or_else(|| Error::invalid("random search produced no finite fitness"))
}

/// CSV with columns `generation,best,mean`.
pub fn history_csv(history: &[GenerationStats]) -> String {
    let mut out = String::from("generation,best,mean\n");
    for g in history {
        let _ = writeln!(out, "{},{},{}", g.generation, g.best, g.mean);
    }
    out
}

/// Distance used for anchor clustering.
#[inline]
pub fn anchor_distance(w: f64, h: f64, anchor: &Anchor) -> f64 {
    1.0 - shape_iou(w, h, anchor.w, anchor.h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Sorted by ascending area.
    pub anchors: Vec<Anchor>,
    /// Total `1 − IoU` distance after initialization and after each iteration.
    pub distance_history: Vec<f64>,
    pub iterations: usize,
}

/// k-means over box shapes with `1 − IoU` distance and median centroids.
///
/// Centers are initialized k-means++ style. A median update is only accepted
/// when it does not increase the cluster's total distance, so the total
/// distance never goes up between iterations. An empty cluster is reseeded
/// with the box currently farthest from its anchor.
pub fn kmeans_anchors<R: Rng + ?Sized>(
    boxes: &[(f64, f64)],
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    if let Some(b) = boxes.iter().find(|(w, h)| !(w.is_finite() && h.is_finite() && *w > 0.0 && *h > 0.0)) {
        return Err(Error::invalid(format!("box shape {b:?} must be positive")));
    }
    let mut distinct: Vec<(f64, f64)> = boxes.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be between 1 and the number of distinct boxes ({})",
            distinct.len()
        )));
    }

    let mut centers = init_plus_plus(boxes, k, rng);
    let mut assign = vec![0usize; boxes.len()];
    let mut dist = vec![0.0f64; boxes.len()];
    assign_all(boxes, &centers, &mut assign, &mut dist);
    let mut history = vec![dist.iter().sum::<f64>()];
    let mut iterations = 0;

    for _ in 0..iters {
        iterations += 1;
        let mut next = centers.clone();
        for (c, center) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..boxes.len()).filter(|&i| assign[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut ws: Vec<f64> = members.iter().map(|&i| boxes[i].0).collect();
            let mut hs: Vec<f64> = members.iter().map(|&i| boxes[i].1).collect();
            let candidate = Anchor::new(median(&mut ws), median(&mut hs));
            let cost = |a: &Anchor| members.iter().map(|&i| anchor_distance(boxes[i].0, boxes[i].1, a)).sum::<f64>();
            if cost(&candidate) <= cost(center) {
                *center = candidate;
            }
        }
        // reseed empty clusters from the worst-served box
        for c in 0..k {
            if assign.iter().all(|&a| a != c) {
                if let Some((far, _)) = dist
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| d > 0.0)
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite").then(b.0.cmp(&a.0)))
                {
                    next[c] = Anchor::new(boxes[far].0, boxes[far].1);
                    dist[far] = 0.0;
                }
            }
        }
        centers = next;
        let before = assign.clone();
        assign_all(boxes, &centers, &mut assign, &mut dist);
        history.push(dist.iter().sum());
        if assign == before {
            break;
        }
    }

    centers.sort_by(|a, b| a.area().partial_cmp(&b.area()).expect("finite").then(a.w.partial_cmp(&b.w).expect("finite")));
    Ok(KMeansResult {
        anchors: centers,
        distance_history: history,
        iterations,
    })
}

fn assign_all(boxes: &[(f64, f64)], centers: &[Anchor], assign: &mut [usize], dist: &mut [f64]) {
    for (i, &(w, h)) in boxes.iter().enumerate() {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(c, a)| (c, anchor_distance(w, h, a)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        assign[i] = best;
        dist[i] = d;
    }
}

fn init_plus_plus<R: Rng + ?Sized>(boxes: &[(f64, f64)], k: usize, rng: &mut R) -> Vec<Anchor> {
    let first = boxes[rng.random_range(0..boxes.len())];
    let mut centers = vec![Anchor::new(first.0, first.1)];
    let mut nearest: Vec<f64> = boxes.iter().map(|&(w, h)| anchor_distance(w, h, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 {
                    chosen = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            chosen.expect("positive total implies a positive entry")
        } else {
            // every box coincides with a center; cannot happen while k ≤ distinct boxes
            rng.random_range(0..boxes.len())
        };
        let c = Anchor::new(boxes[pick].0, boxes[pick].1);
        for (n, &(w, h)) in nearest.iter_mut().zip(boxes) {
            *n = n.min(anchor_distance(w, h, &c));
        }
        centers.push(c);
    }
    centers
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorFit {
    /// Mean over boxes of the best shape IoU with any anchor.
    pub mean_best_iou: f64,
    /// Fraction of boxes whose best IoU exceeds the threshold.
    pub recall: f64,
    pub threshold: f64,
}

pub fn anchor_fit(boxes: &[(f64, f64)], anchors: &[Anchor], threshold: f64) -> AnchorFit {
    if boxes.is_empty() || anchors.is_empty() {
        return AnchorFit {
            mean_best_iou: 0.0,
            recall: 0.0,
            threshold,
        };
    }
    let mut sum = 0.0;
    let mut hits = 0usize;
    for &(w, h) in boxes {
        let best = anchors
            .iter()
            .map(|a| shape_iou(w, h, a.w, a.h))
            .fold(0.0, f64::max);
        sum += best;
        if best > threshold {
            hits += 1;
        }
    }
    AnchorFit {
        mean_best_iou: sum / boxes.len() as f64,
        recall: hits as f64 / boxes.len() as f64,
        threshold,
    }
}

/// Refines anchors with [`evolve`]. Fitness ranks recall at the assignment
/// threshold first and mean best IoU second, so the result never has lower
/// recall than the input. Anchor sides are bounded by `[1, max_side]`.
pub fn evolve_anchors(
    boxes: &[(f64, f64)],
    anchors: &[Anchor],
    max_side: f64,
    cfg: &GaConfig,
) -> Result<(Vec<Anchor>, EvolveResult)> {
    if anchors.is_empty() {
        return Err(Error::invalid("no anchors to evolve"));
    }
    let params = anchors
        .iter()
        .enumerate()
        .flat_map(|(i, a)| {
            [
                HyperParam::new(format!("w{i}"), a.w.clamp(1.0, max_side), 1.0, max_side, 0.1),
                HyperParam::new(format!("h{i}"), a.h.clamp(1.0, max_side), 1.0, max_side, 0.1),
            ]
        })
        .collect();
    let seed = HyperVector::new(params)?;
    let to_anchors = |v: &HyperVector| -> Vec<Anchor> {
        v.params.chunks(2).map(|p| Anchor::new(p[0].value, p[1].value)).collect()
    };
    // mean IoU is scaled below one recall step (1/n) so it only breaks ties
    let tie_scale = 1.0 / (boxes.len() as f64 + 1.0);
    let result = evolve(
        &seed,
        |v| {
            let fit = anchor_fit(boxes, &to_anchors(v), DEFAULT_ASSIGN_IOU_THRESHOLD);
            fit.recall + tie_scale * fit.mean_best_iou
        },
        cfg,
    )?;
    let mut out = to_anchors(&result.best);
    out.sort_by(|a, b| a.area().partial_cmp(&b.area()).expect("finite"));
    Ok((out, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_seed() -> HyperVector {
        HyperVector::new(vec![
            HyperParam::new("a", 8.0, 0.1, 10.0, 0.3),
            HyperParam::new("b", 0.5, 0.1, 10.0, 0.3),
            HyperParam::new("c", 5.0, 0.1, 10.0, 0.3),
        ])
        .unwrap()
    }

    fn neg_sq(v: &HyperVector) -> f64 {
        let t = [2.0, 3.0, 1.0];
        -v.values().iter().zip(t).map(|(x, t)| (x - t).powi(2)).sum::<f64>()
    }

    #[test]
    fn defaults_carry_searched_values() {
        let d = HyperVector::detector_defaults();
        assert_eq!(d.get("lr"), Some(0.00261));
        assert_eq!(d.get("momentum"), Some(0.949));
        assert_eq!(d.get("iou_threshold"), Some(0.213));
        assert_eq!(d.get("loss_normalizer"), Some(0.07));
        assert!(d.validate().is_ok());
    }

    #[test]
    fn evolve_improves_over_seed() {
        let seed = sphere_seed();
        let cfg = GaConfig {
            generations: 50,
            seed: 7,
            ..Default::default()
        };
        let r = evolve(&seed, neg_sq, &cfg).unwrap();
        assert!(r.best_fitness > neg_sq(&seed));
        assert!(r.history.windows(2).all(|w| w[1].best >= w[0].best));
        assert!(r.best.in_bounds());
    }

    #[test]
    fn no_mutation_returns_seed() {
        let seed = sphere_seed();
        let cfg = GaConfig {
            population: 1,
            mutation_prob: 0.0,
            ..Default::default()
        };
        let r = evolve(&seed, neg_sq, &cfg).unwrap();
        assert_eq!(r.best, seed);
    }

    #[test]
    fn non_finite_candidates_are_discarded() {
        let seed = sphere_seed();
        let r = evolve(
            &seed,
            |v| if v.values()[0] > 8.0 { f64::NAN } else { neg_sq(v) },
            &GaConfig::default(),
        )
        .unwrap();
        assert!(r.best_fitness.is_finite());
        assert!(r.best.values()[0] <= 8.0);
    }

    #[test]
    fn budget_is_respected() {
        let cfg = GaConfig {
            population: 7,
            generations: 1000,
            max_evaluations: Some(600),
            ..Default::default()
        };
        let r = evolve(&sphere_seed(), neg_sq, &cfg).unwrap();
        assert_eq!(r.evaluations, 600);
    }

    #[test]
    fn invalid_inputs() {
        let bad = HyperVector {
            params: vec![HyperParam::new("x", 5.0, 0.0, 1.0, 0.1)],
        };
        assert!(evolve(&bad, |_| 0.0, &GaConfig::default()).is_err());
        let cfg = GaConfig {
            mutation_prob: 1.5,
            ..Default::default()
        };
        assert!(evolve(&sphere_seed(), |_| 0.0, &cfg).is_err());
    }

    #[test]
    fn csv_export() {
        let h = [GenerationStats {
            generation: 0,
            best: -1.5,
            mean: -1.5,
            evaluations: 1,
        }];
        assert_eq!(history_csv(&h), "generation,best,mean\n0,-1.5,-1.5\n");
    }

    #[test]
    fn kmeans_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = vec![(12.0, 7.0); 20];
        let r = kmeans_anchors(&same, 1, 10, &mut rng).unwrap();
        assert_eq!(r.anchors, vec![Anchor::new(12.0, 7.0)]);

        let boxes = vec![(10.0, 10.0), (30.0, 5.0), (4.0, 40.0), (60.0, 60.0)];
        let r = kmeans_anchors(&boxes, 4, 10, &mut rng).unwrap();
        assert_eq!(*r.distance_history.last().unwrap(), 0.0);
        assert_eq!(r.anchors.len(), 4);

        assert!(kmeans_anchors(&same, 2, 10, &mut rng).is_err());
        assert!(kmeans_anchors(&[(0.0, 1.0)], 1, 10, &mut rng).is_err());
    }

    #[test]
    fn anchor_fit_values() {
        let fit = anchor_fit(&[(10.0, 10.0), (5.0, 40.0)], &[Anchor::new(10.0, 10.0)], 0.213);
        assert!((fit.mean_best_iou - (1.0 + 0.2) / 2.0).abs() < 1e-15);
        assert_eq!(fit.recall, 0.5);
    }
}
