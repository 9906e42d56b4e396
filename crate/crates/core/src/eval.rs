//! Caltech-style evaluation: setting-based ground-truth filtering, greedy
//! score-ordered matching with ignore regions, FPPI/miss-rate curves and the
//! log-average miss rate.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{rank_order, Candidate};
use crate::geometry::{jaccard, BoundingBox, Category, GroundTruthAnnotation};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

/// Miss rates are floored here before taking logs.
pub const MISS_RATE_FLOOR: f64 = 1e-10;

/// Number of FPPI reference points, spaced evenly in log10 over `[1e-2, 1]`.
pub const LAMR_POINTS: usize = 9;

/// Height window on the full box: `min` inclusive, `max` exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightRange {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl HeightRange {
    pub fn contains(&self, h: f64) -> bool {
        self.min.is_none_or(|m| h >= m) && self.max.is_none_or(|m| h < m)
    }
}

/// Occlusion window: `max` inclusive, `min` inclusive unless `min_exclusive`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionRange {
    pub min: f64,
    pub max: f64,
    pub min_exclusive: bool,
}

impl OcclusionRange {
    pub const ANY: OcclusionRange = OcclusionRange {
        min: 0.0,
        max: 1.0,
        min_exclusive: false,
    };

    pub fn contains(&self, occ: f64) -> bool {
        let lower = if self.min_exclusive {
            occ > self.min
        } else {
            occ >= self.min
        };
        lower && occ <= self.max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSetting {
    pub name: String,
    pub height: HeightRange,
    pub occlusion: OcclusionRange,
}

impl EvalSetting {
    fn named(name: &str, min: Option<f64>, max: Option<f64>, occlusion: OcclusionRange) -> Self {
        Self {
            name: name.to_string(),
            height: HeightRange { min, max },
            occlusion,
        }
    }

    fn occ(min: f64, max: f64, min_exclusive: bool) -> OcclusionRange {
        OcclusionRange {
            min,
            max,
            min_exclusive,
        }
    }

    /// 50+ px, occlusion in `[0, 0.35]`.
    pub fn reasonable() -> Self {
        Self::named("Reasonable", Some(50.0), None, Self::occ(0.0, 0.35, false))
    }

    /// 20+ px, occlusion in `[0, 0.80]`.
    pub fn all() -> Self {
        Self::named("All", Some(20.0), None, Self::occ(0.0, 0.80, false))
    }

    /// Below 30 px.
    pub fn far() -> Self {
        Self::named("Far", None, Some(30.0), OcclusionRange::ANY)
    }

    /// `[30, 80)` px.
    pub fn medium() -> Self {
        Self::named("Medium", Some(30.0), Some(80.0), OcclusionRange::ANY)
    }

    /// 80+ px.
    pub fn near() -> Self {
        Self::named("Near", Some(80.0), None, OcclusionRange::ANY)
    }

    pub fn occ_none() -> Self {
        Self::named("Occ.none", None, None, Self::occ(0.0, 0.0, false))
    }

    /// Occlusion in `(0, 0.35]`.
    pub fn occ_partial() -> Self {
        Self::named("Occ.partial", None, None, Self::occ(0.0, 0.35, true))
    }

    /// Occlusion in `(0.35, 0.80]`.
    pub fn occ_heavy() -> Self {
        Self::named("Occ.heavy", None, None, Self::occ(0.35, 0.80, true))
    }

    pub fn standard() -> [EvalSetting; 8] {
        [
            Self::reasonable(),
            Self::all(),
            Self::far(),
            Self::medium(),
            Self::near(),
            Self::occ_none(),
            Self::occ_partial(),
            Self::occ_heavy(),
        ]
    }

    /// Case-insensitive lookup; `.`, `-`, `_` and spaces are ignored, so
    /// `Occ.none`, `occ-none` and `occnone` all resolve.
    pub fn from_name(name: &str) -> Result<Self> {
        let key: String = name
            .chars()
            .filter(|c| !matches!(c, '.' | '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        Self::standard()
            .into_iter()
            .find(|s| {
                s.name
                    .chars()
                    .filter(|c| *c != '.')
                    .flat_map(char::to_lowercase)
                    .eq(key.chars())
            })
            .ok_or_else(|| Error::UnknownSetting(name.to_string()))
    }

    /// Whether an annotation is scored under this setting (only `person`
    /// boxes inside both windows are).
    pub fn evaluates(&self, gt: &GroundTruthAnnotation) -> bool {
        gt.category == Category::Person
            && self.height.contains(gt.height())
            && self.occlusion.contains(gt.occlusion_fraction())
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Splits ground truth into (evaluated, ignored).
pub fn filter_ground_truth<'a>(
    gt: &'a [GroundTruthAnnotation],
    setting: &EvalSetting,
) -> (Vec<&'a GroundTruthAnnotation>, Vec<&'a GroundTruthAnnotation>) {
    gt.iter().partition(|g| setting.evaluates(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    /// Absorbed by an ignored ground-truth box.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameMatch {
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
}

/// Greedy matching of detections (already in ranking order) against one
/// frame's ground truth. Returns per-detection outcomes and the miss count.
pub fn match_outcomes(
    detections: &[&BoundingBox],
    evaluated: &[&BoundingBox],
    ignored: &[&BoundingBox],
    iou_threshold: f64,
) -> (Vec<MatchOutcome>, usize) {
    let mut taken = vec![false; evaluated.len()];
    let outcomes = detections
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in evaluated.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = jaccard(d, gt);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                MatchOutcome::TruePositive
            } else if ignored.iter().any(|gt| jaccard(d, gt) >= iou_threshold) {
                MatchOutcome::Ignored
            } else {
                MatchOutcome::FalsePositive
            }
        })
        .collect();
    let misses = taken.iter().filter(|t| !**t).count();
    (outcomes, misses)
}

/// Sorts `detections` into ranking order and matches them.
pub fn match_frame(
    detections: &[Candidate],
    evaluated: &[&GroundTruthAnnotation],
    ignored: &[&GroundTruthAnnotation],
    iou_threshold: f64,
) -> FrameMatch {
    let mut ranked: Vec<&Candidate> = detections.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let boxes: Vec<&BoundingBox> = ranked.iter().map(|c| &c.bbox).collect();
    let ev: Vec<&BoundingBox> = evaluated.iter().map(|g| &g.bbox).collect();
    let ig: Vec<&BoundingBox> = ignored.iter().map(|g| &g.bbox).collect();
    let (outcomes, misses) = match_outcomes(&boxes, &ev, &ig, iou_threshold);
    let count = |o| outcomes.iter().filter(|x| **x == o).count();
    FrameMatch {
        true_positives: count(MatchOutcome::TruePositive),
        false_positives: count(MatchOutcome::FalsePositive),
        misses,
    }
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub detections: Vec<Candidate>,
    pub ground_truth: Vec<GroundTruthAnnotation>,
}

/// Frames keyed by frame id. Every frame counts toward FPPI, including
/// frames with neither detections nor ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub frames: BTreeMap<String, Frame>,
}

impl Corpus {
    pub fn new(detections: Vec<Candidate>, ground_truth: Vec<GroundTruthAnnotation>) -> Self {
        let mut corpus = Corpus::default();
        for d in detections {
            corpus
                .frames
                .entry(d.frame_id.clone())
                .or_default()
                .detections
                .push(d);
        }
        for g in ground_truth {
            corpus
                .frames
                .entry(g.frame_id.clone())
                .or_default()
                .ground_truth
                .push(g);
        }
        corpus
    }

    /// Registers frames that may have no records (negative images).
    pub fn with_frames<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for id in ids {
            self.frames.entry(id.into()).or_default();
        }
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub fppi: f64,
    pub miss_rate: f64,
}

/// Miss rate as a function of false positives per image.
#[derive(Debug, Clone, PartialEq)]
pub struct MissRateCurve {
    points: Vec<CurvePoint>,
    lamr: f64,
}

impl MissRateCurve {
    /// Points must have strictly increasing FPPI.
    pub fn from_points(points: Vec<CurvePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("miss-rate curve has no points".into()));
        }
        if points.windows(2).any(|w| w[1].fppi <= w[0].fppi) {
            return Err(Error::InvalidParameter(
                "curve FPPI values must be strictly increasing".into(),
            ));
        }
        let lamr = lamr_of(&points);
        Ok(Self { points, lamr })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn lamr(&self) -> f64 {
        self.lamr
    }

    /// CSV with header `fppi,miss_rate` and a trailing `# lamr=<value>` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fppi,miss_rate\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{}", p.fppi, p.miss_rate);
        }
        let _ = writeln!(out, "# lamr={}", self.lamr);
        out
    }
}

/// FPPI reference points `10^(-2 + k/4)`, `k = 0..8`.
pub fn lamr_reference_points() -> [f64; LAMR_POINTS] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + k as f64 / 4.0))
}

fn lamr_of(points: &[CurvePoint]) -> f64 {
    let refs = lamr_reference_points();
    let sum_ln: f64 = refs
        .iter()
        .map(|&r| {
            let sampled = points
                .iter()
                .rev()
                .find(|p| p.fppi <= r)
                .unwrap_or(&points[0])
                .miss_rate;
            sampled.max(MISS_RATE_FLOOR).ln()
        })
        .sum();
    (sum_ln / LAMR_POINTS as f64).exp()
}

/// Log-average miss rate: geometric mean of the miss rates sampled (staircase,
/// previous point) at the nine FPPI reference points.
pub fn compute_lamr(curve: &MissRateCurve) -> f64 {
    lamr_of(&curve.points)
}

struct FrameResult {
    /// (score, outcome) for non-ignored detections.
    scored: Vec<(f64, bool)>,
    evaluated: usize,
}

fn evaluate_frame(frame: &Frame, setting: &EvalSetting, iou_threshold: f64) -> FrameResult {
    let (ev, ig) = filter_ground_truth(&frame.ground_truth, setting);
    let mut ranked: Vec<&Candidate> = frame.detections.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let boxes: Vec<&BoundingBox> = ranked.iter().map(|c| &c.bbox).collect();
    let ev_boxes: Vec<&BoundingBox> = ev.iter().map(|g| &g.bbox).collect();
    let ig_boxes: Vec<&BoundingBox> = ig.iter().map(|g| &g.bbox).collect();
    let (outcomes, _) = match_outcomes(&boxes, &ev_boxes, &ig_boxes, iou_threshold);
    let scored = ranked
        .iter()
        .zip(outcomes)
        .filter_map(|(c, o)| match o {
            MatchOutcome::TruePositive => Some((c.score_fused(), true)),
            MatchOutcome::FalsePositive => Some((c.score_fused(), false)),
            MatchOutcome::Ignored => None,
        })
        .collect();
    FrameResult {
        scored,
        evaluated: ev.len(),
    }
}

/// Sweeps the score threshold over every distinct fused score and records
/// (FPPI, miss rate) after each step, starting from the empty detection set.
/// Points sharing an FPPI collapse to the lowest miss rate.
pub fn compute_curve(corpus: &Corpus, setting: &EvalSetting, iou_threshold: f64) -> Result<MissRateCurve> {
    compute_curve_with(corpus, setting, iou_threshold, Execution::Parallel)
}

pub fn compute_curve_with(
    corpus: &Corpus,
    setting: &EvalSetting,
    iou_threshold: f64,
    execution: Execution,
) -> Result<MissRateCurve> {
    if corpus.is_empty() {
        return Err(Error::NoFrames);
    }
    let frames: Vec<&Frame> = corpus.frames.values().collect();
    let results: Vec<FrameResult> = match execution {
        Execution::Sequential => frames
            .iter()
            .map(|f| evaluate_frame(f, setting, iou_threshold))
            .collect(),
        Execution::Parallel => frames
            .par_iter()
            .map(|f| evaluate_frame(f, setting, iou_threshold))
            .collect(),
    };

    let total_gt: usize = results.iter().map(|r| r.evaluated).sum();
    if total_gt == 0 {
        return Err(Error::NoEvaluatedGroundTruth(setting.name.clone()));
    }
    let mut scored: Vec<(f64, bool)> = results.into_iter().flat_map(|r| r.scored).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_frames = corpus.len() as f64;
    let n_gt = total_gt as f64;
    let mut points = vec![CurvePoint {
        fppi: 0.0,
        miss_rate: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let score = scored[i].0;
        while i < scored.len() && scored[i].0 == score {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let point = CurvePoint {
            fppi: fp as f64 / n_frames,
            miss_rate: (total_gt - tp) as f64 / n_gt,
        };
        match points.last_mut() {
            Some(last) if last.fppi == point.fppi => *last = point,
            _ => points.push(point),
        }
    }
    MissRateCurve::from_points(points)
}
