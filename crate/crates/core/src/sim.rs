//! Synthetic scenes, classifier verdicts and segmentation masks that stand in
//! for trained networks.
//!
//! Randomness comes from [`SimRng`]: ChaCha8 seeded through
//! `SeedableRng::seed_from_u64`, with uniform doubles taken from the top 53
//! bits of each `u64` draw. Every output is a pure function of its config and
//! seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{Candidate, ClassifierVerdict, VerdictSet};
use crate::geometry::{
    jaccard, label_candidates, BoundingBox, Category, GroundTruthAnnotation, SegmentationMask,
};

/// Mean pedestrian aspect ratio (w/h).
pub const PEDESTRIAN_ASPECT: f64 = 0.41;

/// Background boxes may overlap ground truth by at most this much.
const FP_MAX_OVERLAP: f64 = 0.3;

pub struct SimRng(ChaCha8Rng);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + ((self.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
    }
}

/// SplitMix64 finalizer over two seeds.
pub fn mix_seeds(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub image_w: u32,
    pub image_h: u32,
    pub pedestrians: usize,
    /// Explicit background-candidate count; `None` uses `fp_ratio * pedestrians`.
    pub false_positives: Option<usize>,
    pub fp_ratio: f64,
    /// Pedestrian (and background box) height range in pixels.
    pub height_range: (f64, f64),
    /// Relative spread of the pedestrian aspect ratio around 0.41.
    pub aspect_spread: f64,
    /// Relative jitter of true-positive candidate boxes; 0 copies the GT box.
    pub jitter: f64,
    pub tp_score_range: (f64, f64),
    pub fp_score_range: (f64, f64),
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_w: 640,
            image_h: 480,
            pedestrians: 2,
            false_positives: None,
            fp_ratio: 2.4,
            height_range: (50.0, 200.0),
            aspect_spread: 0.1,
            jitter: 0.05,
            tp_score_range: (0.4, 1.0),
            fp_score_range: (0.01, 0.7),
            max_attempts: 1000,
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.image_w == 0 || self.image_h == 0 {
            return bad("image dimensions must be positive".into());
        }
        let (hmin, hmax) = self.height_range;
        if !(hmin > 0.0 && hmin <= hmax && hmax <= self.image_h as f64) {
            return bad(format!(
                "height range ({hmin}, {hmax}) must lie in (0, image height]"
            ));
        }
        for (name, (lo, hi)) in [("tp", self.tp_score_range), ("fp", self.fp_score_range)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!("{name} score range ({lo}, {hi}) must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.aspect_spread) || !(0.0..0.5).contains(&self.jitter) {
            return bad("aspect_spread must be in [0, 1) and jitter in [0, 0.5)".into());
        }
        if !(self.fp_ratio >= 0.0 && self.fp_ratio.is_finite()) {
            return bad(format!("fp_ratio {} must be non-negative", self.fp_ratio));
        }
        Ok(())
    }

    pub fn false_positive_count(&self) -> usize {
        self.false_positives
            .unwrap_or_else(|| (self.fp_ratio * self.pedestrians as f64).round() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub frame_id: String,
    pub image_w: u32,
    pub image_h: u32,
    pub gt: Vec<GroundTruthAnnotation>,
    pub candidates: Vec<Candidate>,
    pub rng_seed: u64,
}

impl SyntheticScene {
    pub fn labels(&self) -> Vec<bool> {
        let boxes: Vec<BoundingBox> = self.candidates.iter().map(|c| c.bbox).collect();
        label_candidates(&boxes, &self.gt)
    }
}

fn random_pedestrian_box(rng: &mut SimRng, cfg: &SceneConfig) -> Option<BoundingBox> {
    let h = rng.range(cfg.height_range.0, cfg.height_range.1);
    let aspect = PEDESTRIAN_ASPECT * (1.0 + rng.range(-cfg.aspect_spread, cfg.aspect_spread));
    let w = aspect * h;
    let (iw, ih) = (cfg.image_w as f64, cfg.image_h as f64);
    if w > iw || h > ih {
        return None;
    }
    let x = rng.range(0.0, iw - w);
    let y = rng.range(0.0, ih - h);
    BoundingBox::new(x, y, w, h).ok()
}

fn jittered(rng: &mut SimRng, gt: &BoundingBox, jitter: f64) -> BoundingBox {
    if jitter == 0.0 {
        return *gt;
    }
    let (cx, cy) = gt.center();
    let mut j = || rng.range(-jitter, jitter);
    let cx = cx + j() * gt.width();
    let cy = cy + j() * gt.height();
    let w = gt.width() * (1.0 + j());
    let h = gt.height() * (1.0 + j());
    BoundingBox::from_center(cx, cy, w, h).unwrap_or(*gt)
}

/// Generates one scene: non-overlapping pedestrians inside the image, one
/// jittered true-positive candidate per pedestrian (overlap > 0.5 guaranteed)
/// and background candidates overlapping no pedestrian by more than 0.3.
pub fn generate_scene(frame_id: &str, cfg: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = SimRng::new(seed);
    let infeasible = || Error::InfeasiblePlacement {
        requested: cfg.pedestrians,
        width: cfg.image_w,
        height: cfg.image_h,
    };

    let mut gt_boxes: Vec<BoundingBox> = Vec::with_capacity(cfg.pedestrians);
    for _ in 0..cfg.pedestrians {
        let placed = (0..cfg.max_attempts).find_map(|_| {
            random_pedestrian_box(&mut rng, cfg)
                .filter(|b| gt_boxes.iter().all(|g| g.intersection_area(b) == 0.0))
        });
        gt_boxes.push(placed.ok_or_else(infeasible)?);
    }

    let mut candidates = Vec::new();
    let mut next_id = 0usize;
    let mut push = |bbox: BoundingBox, score: f64, out: &mut Vec<Candidate>| -> Result<()> {
        out.push(Candidate::new(
            format!("{frame_id}-c{next_id:04}"),
            frame_id,
            bbox,
            score,
        )?);
        next_id += 1;
        Ok(())
    };

    for g in &gt_boxes {
        let mut bbox = *g;
        for _ in 0..cfg.max_attempts {
            let b = jittered(&mut rng, g, cfg.jitter);
            if jaccard(&b, g) > 0.5 {
                bbox = b;
                break;
            }
        }
        let score = rng.range(cfg.tp_score_range.0, cfg.tp_score_range.1);
        push(bbox, score, &mut candidates)?;
    }

    for _ in 0..cfg.false_positive_count() {
        let placed = (0..cfg.max_attempts).find_map(|_| {
            random_pedestrian_box(&mut rng, cfg)
                .filter(|b| gt_boxes.iter().all(|g| jaccard(g, b) <= FP_MAX_OVERLAP))
        });
        let bbox = placed.ok_or_else(infeasible)?;
        let score = rng.range(cfg.fp_score_range.0, cfg.fp_score_range.1);
        push(bbox, score, &mut candidates)?;
    }

    let gt = gt_boxes
        .into_iter()
        .map(|b| GroundTruthAnnotation::new(frame_id, b, Category::Person))
        .collect();
    Ok(SyntheticScene {
        frame_id: frame_id.to_string(),
        image_w: cfg.image_w,
        image_h: cfg.image_h,
        gt,
        candidates,
        rng_seed: seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub frames: usize,
    /// Pedestrians per frame, drawn uniformly from this inclusive range.
    pub pedestrians: (usize, usize),
    pub scene: SceneConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            frames: 200,
            pedestrians: (1, 3),
            scene: SceneConfig::default(),
            seed: 0,
        }
    }
}

/// Frame ids are `frame00000`, `frame00001`, ...; per-frame seeds and
/// pedestrian counts are drawn sequentially from the corpus seed, then
/// scenes are generated in parallel.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<SyntheticScene>> {
    let (lo, hi) = cfg.pedestrians;
    if lo > hi {
        return Err(Error::InvalidParameter(format!(
            "pedestrian range {lo}..={hi} is empty"
        )));
    }
    let mut rng = SimRng::new(cfg.seed);
    let plan: Vec<(String, usize, u64)> = (0..cfg.frames)
        .map(|i| {
            let n = rng.int_inclusive(lo, hi);
            (format!("frame{i:05}"), n, rng.next_u64())
        })
        .collect();
    plan.into_par_iter()
        .map(|(frame, n, seed)| {
            let scene_cfg = SceneConfig {
                pedestrians: n,
                ..cfg.scene.clone()
            };
            generate_scene(&frame, &scene_cfg, seed)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierKind {
    /// Perfect labels: p = 1 for positives, 0 for negatives.
    Oracle,
    /// `tpr`: chance a positive gets p >= a_c; `fpr`: chance a negative does.
    Noisy { tpr: f64, fpr: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimClassifierSpec {
    pub classifier_id: String,
    pub kind: ClassifierKind,
    pub rng_seed: u64,
}

impl SimClassifierSpec {
    pub fn oracle(classifier_id: impl Into<String>) -> Self {
        Self {
            classifier_id: classifier_id.into(),
            kind: ClassifierKind::Oracle,
            rng_seed: 0,
        }
    }

    pub fn noisy(classifier_id: impl Into<String>, tpr: f64, fpr: f64, rng_seed: u64) -> Result<Self> {
        for (name, v) in [("tpr", tpr), ("fpr", fpr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfDomain {
                    name,
                    value: v,
                    domain: "[0, 1]",
                });
            }
        }
        Ok(Self {
            classifier_id: classifier_id.into(),
            kind: ClassifierKind::Noisy { tpr, fpr },
            rng_seed,
        })
    }
}

/// Verdicts for every candidate of `scene`, labels taken against its ground
/// truth. A noisy classifier that "fires" draws p uniformly in `[a_c, 1)`,
/// otherwise in `[0, a_c)`. The stream is seeded by mixing the classifier
/// seed with the scene seed.
pub fn simulate_verdicts(
    scene: &SyntheticScene,
    spec: &SimClassifierSpec,
    a_c: f64,
) -> Vec<ClassifierVerdict> {
    let labels = scene.labels();
    let mut rng = SimRng::new(mix_seeds(spec.rng_seed, scene.rng_seed));
    scene
        .candidates
        .iter()
        .zip(labels)
        .map(|(c, positive)| {
            let p = match spec.kind {
                ClassifierKind::Oracle => {
                    if positive {
                        1.0
                    } else {
                        0.0
                    }
                }
                ClassifierKind::Noisy { tpr, fpr } => {
                    let fire_prob = if positive { tpr } else { fpr };
                    let fires = rng.uniform() < fire_prob;
                    let u = rng.uniform();
                    if fires {
                        a_c + (1.0 - a_c) * u
                    } else {
                        a_c * u
                    }
                }
            };
            ClassifierVerdict {
                candidate_id: c.id.clone(),
                classifier_id: spec.classifier_id.clone(),
                probability: p,
            }
        })
        .collect()
}

/// Verdicts of one simulated classifier over a whole corpus.
pub fn simulate_verdict_set(
    scenes: &[SyntheticScene],
    spec: &SimClassifierSpec,
    a_c: f64,
) -> Result<VerdictSet> {
    let mut set = VerdictSet::new(spec.classifier_id.clone());
    for scene in scenes {
        for v in simulate_verdicts(scene, spec, a_c) {
            set.insert(v.candidate_id, v.probability)?;
        }
    }
    Ok(set)
}

/// Rasterizes the scene's ground truth. Each box is shrunk about its center
/// by `sqrt(quality)` per side, so painted area scales with `quality`; 1
/// paints boxes exactly, 0 paints nothing.
pub fn synthesize_mask(scene: &SyntheticScene, quality: f64) -> Result<SegmentationMask> {
    if !(0.0..=1.0).contains(&quality) {
        return Err(Error::OutOfDomain {
            name: "coverage_quality",
            value: quality,
            domain: "[0, 1]",
        });
    }
    let mut mask = SegmentationMask::filled(
        scene.frame_id.clone(),
        scene.image_w as usize,
        scene.image_h as usize,
        false,
    )?;
    if quality == 0.0 {
        return Ok(mask);
    }
    let s = quality.sqrt();
    for g in &scene.gt {
        let (cx, cy) = g.bbox.center();
        let Ok(painted) = BoundingBox::from_center(cx, cy, g.bbox.width() * s, g.bbox.height() * s) else {
            continue;
        };
        let (cols, rows) = mask.pixel_span(&painted);
        for r in rows {
            for c in cols.clone() {
                mask.set(c, r, true);
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse_segmentation, FusionParams};

    #[test]
    fn background_only_scene() {
        let cfg = SceneConfig {
            pedestrians: 0,
            false_positives: Some(10),
            ..SceneConfig::default()
        };
        let s = generate_scene("f", &cfg, 1).unwrap();
        assert!(s.gt.is_empty());
        assert_eq!(s.candidates.len(), 10);
        assert!(s.labels().iter().all(|l| !l));
    }

    #[test]
    fn zero_jitter_copies_gt() {
        let cfg = SceneConfig {
            pedestrians: 1,
            false_positives: Some(0),
            jitter: 0.0,
            ..SceneConfig::default()
        };
        let s = generate_scene("f", &cfg, 9).unwrap();
        assert_eq!(s.candidates[0].bbox, s.gt[0].bbox);
        assert_eq!(s.labels(), vec![true]);
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(
            generate_scene("f", &cfg, 42).unwrap(),
            generate_scene("f", &cfg, 42).unwrap()
        );
        assert_ne!(
            generate_scene("f", &cfg, 42).unwrap(),
            generate_scene("f", &cfg, 43).unwrap()
        );
    }

    #[test]
    fn infeasible_placement_errors() {
        let cfg = SceneConfig {
            image_w: 100,
            image_h: 100,
            pedestrians: 50,
            height_range: (60.0, 90.0),
            max_attempts: 50,
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene("f", &cfg, 0),
            Err(Error::InfeasiblePlacement { .. })
        ));
    }

    #[test]
    fn scene_invariants_hold() {
        let corpus = generate_corpus(&CorpusConfig {
            frames: 40,
            seed: 5,
            ..CorpusConfig::default()
        })
        .unwrap();
        for s in &corpus {
            for g in &s.gt {
                assert!(g.bbox.x() >= 0.0 && g.bbox.y() >= 0.0);
                assert!(g.bbox.right() <= 640.0 && g.bbox.bottom() <= 480.0);
                let best = s
                    .candidates
                    .iter()
                    .map(|c| jaccard(&c.bbox, &g.bbox))
                    .fold(0.0, f64::max);
                assert!(best > 0.5);
            }
            let labels = s.labels();
            let positives = labels.iter().filter(|l| **l).count();
            assert_eq!(positives, s.gt.len());
        }
    }

    #[test]
    fn oracle_and_degenerate_noisy_verdicts() {
        let s = generate_scene("f", &SceneConfig::default(), 3).unwrap();
        let labels = s.labels();
        let oracle = simulate_verdicts(&s, &SimClassifierSpec::oracle("o"), 0.7);
        for (v, l) in oracle.iter().zip(&labels) {
            assert_eq!(v.probability, if *l { 1.0 } else { 0.0 });
        }
        let useless = SimClassifierSpec::noisy("n", 1.0, 1.0, 7).unwrap();
        assert!(simulate_verdicts(&s, &useless, 0.7)
            .iter()
            .all(|v| v.probability >= 0.7));
        let spec = SimClassifierSpec::noisy("n", 0.9, 0.1, 7).unwrap();
        assert_eq!(
            simulate_verdicts(&s, &spec, 0.7),
            simulate_verdicts(&s, &spec, 0.7)
        );
        assert!(SimClassifierSpec::noisy("n", 1.1, 0.0, 0).is_err());
    }

    #[test]
    fn mask_examples() {
        let cfg = SceneConfig {
            pedestrians: 1,
            false_positives: Some(1),
            jitter: 0.0,
            ..SceneConfig::default()
        };
        let s = generate_scene("f", &cfg, 11).unwrap();
        let mask = synthesize_mask(&s, 1.0).unwrap();
        let on_gt = mask.coverage(&s.gt[0].bbox);
        assert!(on_gt > 0.95, "coverage {on_gt}");
        let fp = &s.candidates[1];
        if fp.bbox.intersection_area(&s.gt[0].bbox) == 0.0 {
            let cov = mask.coverage(&fp.bbox);
            assert_eq!(cov, 0.0);
            let fused = fuse_segmentation(fp, cov, &FusionParams::default()).unwrap();
            assert_eq!(fused.applied_factors()[0].factor, 0.35);
        }
        let empty = SyntheticScene {
            gt: vec![],
            ..s.clone()
        };
        assert_eq!(synthesize_mask(&empty, 1.0).unwrap().pedestrian_pixels(), 0);
        assert_eq!(synthesize_mask(&s, 0.0).unwrap().pedestrian_pixels(), 0);
        let half = synthesize_mask(&s, 0.5).unwrap().pedestrian_pixels() as f64;
        let full = mask.pedestrian_pixels() as f64;
        assert!((half / full - 0.5).abs() < 0.1);
        assert!(synthesize_mask(&s, 1.5).is_err());
    }

    #[test]
    fn rng_uniform_in_unit_interval() {
        let mut r = SimRng::new(0);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            let k = r.int_inclusive(1, 3);
            assert!((1..=3).contains(&k));
        }
    }
}
