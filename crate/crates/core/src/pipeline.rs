//! End-to-end run: candidates -> optional prefilter -> classifier fusion ->
//! segmentation fusion -> optional NMS -> miss-rate curve.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{compute_curve, Corpus, EvalSetting, MissRateCurve, DEFAULT_MATCH_IOU};
use crate::fusion::{
    merge_verdict_sets, nms_per_frame, Candidate, FusionEngine, FusionParams, MissingVerdictPolicy,
    Prefilter, VerdictSet, HARD_CLASSIFIER_THRESHOLD, HARD_MIN_COVERAGE,
};
use crate::geometry::{mask_coverage, GroundTruthAnnotation, SegmentationMask};
use crate::io;

/// Where per-frame segmentation masks come from.
pub trait MaskSource: Sync {
    fn mask(&self, frame_id: &str) -> Result<Cow<'_, SegmentationMask>>;
}

/// Masks stored as `<dir>/<frame>.pgm`.
#[derive(Debug, Clone)]
pub struct MaskDir(pub PathBuf);

impl MaskSource for MaskDir {
    fn mask(&self, frame_id: &str) -> Result<Cow<'_, SegmentationMask>> {
        io::read_mask(io::mask_path(&self.0, frame_id)).map(Cow::Owned)
    }
}

impl MaskSource for HashMap<String, SegmentationMask> {
    fn mask(&self, frame_id: &str) -> Result<Cow<'_, SegmentationMask>> {
        self.get(frame_id)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::InvalidParameter(format!("no mask for frame '{frame_id}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rejection {
    #[default]
    Soft,
    Hard,
}

/// Fusion and evaluation settings shared by file-based and in-memory runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub fusion: FusionParams,
    pub missing: MissingVerdictPolicy,
    pub prefilter: Prefilter,
    pub rejection: Rejection,
    pub hard_threshold: f64,
    pub hard_min_coverage: f64,
    pub nms_iou: Option<f64>,
    pub setting: EvalSetting,
    pub match_iou: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            fusion: FusionParams::default(),
            missing: MissingVerdictPolicy::Strict,
            prefilter: Prefilter::Off,
            rejection: Rejection::Soft,
            hard_threshold: HARD_CLASSIFIER_THRESHOLD,
            hard_min_coverage: HARD_MIN_COVERAGE,
            nms_iou: None,
            setting: EvalSetting::reasonable(),
            match_iou: DEFAULT_MATCH_IOU,
        }
    }
}

impl PipelineOptions {
    pub fn engine(&self) -> Result<FusionEngine> {
        Ok(FusionEngine::new(self.fusion)?
            .with_missing(self.missing)
            .with_prefilter(self.prefilter))
    }

    /// Applies classifiers, then masks, then NMS.
    pub fn fuse(
        &self,
        candidates: Vec<Candidate>,
        verdicts: &[VerdictSet],
        masks: Option<&dyn MaskSource>,
    ) -> Result<Vec<Candidate>> {
        let engine = self.engine()?;
        let mut fused = match self.rejection {
            Rejection::Soft => engine.fuse_classifiers(candidates, verdicts)?,
            Rejection::Hard => engine.hard_reject(candidates, verdicts, self.hard_threshold)?,
        };
        if let Some(masks) = masks {
            let coverage = frame_coverages(&fused, masks)?;
            let lookup = |c: &Candidate| {
                coverage
                    .get(c.id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidParameter(format!("no coverage for '{}'", c.id)))
            };
            fused = match self.rejection {
                Rejection::Soft => engine.fuse_segmentation(fused, lookup)?,
                Rejection::Hard => engine.hard_reject_segmentation(fused, self.hard_min_coverage, lookup)?,
            };
        }
        if let Some(iou) = self.nms_iou {
            fused = nms_per_frame(fused, iou)?;
        }
        Ok(fused)
    }

    /// Curve over every frame in `frames`, the detections and the ground truth.
    pub fn evaluate(
        &self,
        detections: Vec<Candidate>,
        ground_truth: Vec<GroundTruthAnnotation>,
        frames: impl IntoIterator<Item = String>,
    ) -> Result<MissRateCurve> {
        let corpus = Corpus::new(detections, ground_truth).with_frames(frames);
        compute_curve(&corpus, &self.setting, self.match_iou)
    }
}

/// Coverage of every candidate's box by its frame's mask, loading each mask
/// once; frames are processed in parallel.
fn frame_coverages(candidates: &[Candidate], masks: &dyn MaskSource) -> Result<HashMap<String, f64>> {
    let mut by_frame: BTreeMap<&str, Vec<&Candidate>> = BTreeMap::new();
    for c in candidates {
        by_frame.entry(c.frame_id.as_str()).or_default().push(c);
    }
    let per_frame: Vec<Vec<(String, f64)>> = by_frame
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(frame, cands)| {
            let mask = masks.mask(frame)?;
            cands
                .into_iter()
                .map(|c| Ok((c.id.clone(), mask_coverage(frame, &c.bbox, &mask)?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}

/// File-based run configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub detections: PathBuf,
    pub annotations: Option<PathBuf>,
    pub verdict_files: Vec<PathBuf>,
    pub mask_dir: Option<PathBuf>,
    pub options: PipelineOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub detections: Vec<Candidate>,
    /// Present when annotations were supplied.
    pub curve: Option<MissRateCurve>,
}

pub fn read_verdict_files(paths: &[PathBuf]) -> Result<Vec<VerdictSet>> {
    let per_file: Vec<Vec<VerdictSet>> = paths.par_iter().map(io::read_verdicts).collect::<Result<_>>()?;
    merge_verdict_sets(per_file.into_iter().flatten())
}

pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    let candidates = io::read_detections(&config.detections)?;
    let annotations = config
        .annotations
        .as_deref()
        .map(io::read_annotations)
        .transpose()?;
    let frames: BTreeSet<String> = candidates
        .iter()
        .map(|c| c.frame_id.clone())
        .chain(annotations.iter().flatten().map(|g| g.frame_id.clone()))
        .collect();
    if frames.is_empty() {
        return Err(Error::NoFrames);
    }

    let verdicts = read_verdict_files(&config.verdict_files)?;
    let mask_dir = config.mask_dir.clone().map(MaskDir);
    let fused = config.options.fuse(
        candidates,
        &verdicts,
        mask_dir.as_ref().map(|m| m as &dyn MaskSource),
    )?;

    let curve = match annotations {
        Some(gt) => Some(config.options.evaluate(fused.clone(), gt, frames)?),
        None => None,
    };
    Ok(PipelineOutput {
        detections: fused,
        curve,
    })
}
