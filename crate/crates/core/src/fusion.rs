//! Soft-rejection fusion of candidate-generator scores with classifier
//! probabilities and segmentation-mask coverage, plus the hard-rejection
//! baseline, candidate collection and greedy NMS.
//!
//! A candidate's fused score is always its generator score times the product
//! of the factors recorded in [`Candidate::applied_factors`]. Nothing here ever
//! sets a score to zero: soft rejection only rescales. Fused scores are not
//! clamped to `[0, 1]`; with `M` confident classifiers they can reach
//! `(1 / a_c)^M`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{jaccard, BoundingBox};

/// Source tag recorded for segmentation factors.
pub const SEGMENTATION_SOURCE: &str = "ss";

/// Classifier threshold used by the hard-rejection baseline.
pub const HARD_CLASSIFIER_THRESHOLD: f64 = 0.5;
/// Mask-coverage threshold used by the hard-rejection baseline.
pub const HARD_MIN_COVERAGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Probability at which a classifier leaves the score unchanged.
    pub a_c: f64,
    /// Lower bound of a classifier factor.
    pub b_c: f64,
    /// Slope applied to mask coverage below the accept ratio.
    pub a_ss: f64,
    /// Lower bound of a segmentation factor.
    pub b_ss: f64,
    /// Coverage strictly above which the segmentation vote accepts unchanged.
    pub ss_accept_ratio: f64,
    pub collect_min_score: f64,
    pub collect_min_height_px: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            a_c: 0.7,
            b_c: 0.1,
            a_ss: 4.0,
            b_ss: 0.35,
            ss_accept_ratio: 0.2,
            collect_min_score: 0.01,
            collect_min_height_px: 40.0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &'static str, value: f64, domain: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(Error::OutOfDomain { name, value, domain })
            }
        };
        check(self.a_c > 0.0 && self.a_c <= 1.0, "a_c", self.a_c, "(0, 1]")?;
        check(self.b_c > 0.0 && self.b_c <= 1.0, "b_c", self.b_c, "(0, 1]")?;
        check(
            self.a_ss > 0.0 && self.a_ss.is_finite(),
            "a_ss",
            self.a_ss,
            "(0, inf)",
        )?;
        check(self.b_ss > 0.0 && self.b_ss <= 1.0, "b_ss", self.b_ss, "(0, 1]")?;
        check(
            self.ss_accept_ratio > 0.0 && self.ss_accept_ratio < 1.0,
            "ss_accept_ratio",
            self.ss_accept_ratio,
            "(0, 1)",
        )?;
        check(
            self.collect_min_score.is_finite(),
            "collect_min_score",
            self.collect_min_score,
            "finite",
        )?;
        check(
            self.collect_min_height_px.is_finite(),
            "collect_min_height_px",
            self.collect_min_height_px,
            "finite",
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppliedFactor {
    pub source: String,
    pub factor: f64,
}

/// A detection hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub frame_id: String,
    pub bbox: BoundingBox,
    score_generator: f64,
    score_fused: f64,
    applied_factors: Vec<AppliedFactor>,
}

impl Candidate {
    /// New unfused candidate; `score` must lie in `[0, 1]`.
    pub fn new(
        id: impl Into<String>,
        frame_id: impl Into<String>,
        bbox: BoundingBox,
        score: f64,
    ) -> Result<Self> {
        check_probability("score", score)?;
        Ok(Self {
            id: id.into(),
            frame_id: frame_id.into(),
            bbox,
            score_generator: score,
            score_fused: score,
            applied_factors: Vec::new(),
        })
    }

    pub fn score_generator(&self) -> f64 {
        self.score_generator
    }

    pub fn score_fused(&self) -> f64 {
        self.score_fused
    }

    pub fn applied_factors(&self) -> &[AppliedFactor] {
        &self.applied_factors
    }

    /// Multiplies the fused score by `factor` and records it.
    pub fn apply_factor(&mut self, source: impl Into<String>, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "factor",
                value: factor,
                domain: "(0, inf)",
            });
        }
        self.score_fused *= factor;
        self.applied_factors.push(AppliedFactor {
            source: source.into(),
            factor,
        });
        Ok(())
    }

    /// Generator score times every recorded factor, in application order.
    pub fn recomputed_score(&self) -> f64 {
        self.applied_factors
            .iter()
            .fold(self.score_generator, |s, f| s * f.factor)
    }
}

/// Ranking order: descending fused score, then ascending id.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score_fused
        .total_cmp(&a.score_fused)
        .then_with(|| a.id.cmp(&b.id))
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            name,
            value: p,
            domain: "[0, 1]",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierVerdict {
    pub candidate_id: String,
    pub classifier_id: String,
    pub probability: f64,
}

impl ClassifierVerdict {
    pub fn new(
        candidate_id: impl Into<String>,
        classifier_id: impl Into<String>,
        probability: f64,
    ) -> Result<Self> {
        check_probability("probability", probability)?;
        Ok(Self {
            candidate_id: candidate_id.into(),
            classifier_id: classifier_id.into(),
            probability,
        })
    }
}

/// Confidence scaling factor `max(p / a_c, b_c)`.
pub fn scaling_factor(p: f64, params: &FusionParams) -> Result<f64> {
    check_probability("probability", p)?;
    Ok((p / params.a_c).max(params.b_c))
}

/// Segmentation factor: 1 when coverage exceeds the accept ratio, otherwise
/// `max(coverage * a_ss, b_ss)`.
pub fn segmentation_factor(coverage: f64, params: &FusionParams) -> Result<f64> {
    check_probability("coverage", coverage)?;
    if coverage > params.ss_accept_ratio {
        Ok(1.0)
    } else {
        Ok((coverage * params.a_ss).max(params.b_ss))
    }
}

/// Fuses one candidate with the verdicts of its classifiers.
///
/// Factors are applied in ascending classifier-id order, so the result is
/// bit-identical for any permutation of `verdicts`.
pub fn fuse_classifiers(
    candidate: &Candidate,
    verdicts: &[ClassifierVerdict],
    params: &FusionParams,
) -> Result<Candidate> {
    let mut sorted: Vec<&ClassifierVerdict> = verdicts.iter().collect();
    sorted.sort_by(|a, b| a.classifier_id.cmp(&b.classifier_id));
    for pair in sorted.windows(2) {
        if pair[0].classifier_id == pair[1].classifier_id {
            return Err(Error::DuplicateVerdict {
                classifier: pair[0].classifier_id.clone(),
                candidate: candidate.id.clone(),
            });
        }
    }
    let mut out = candidate.clone();
    for v in sorted {
        if v.candidate_id != candidate.id {
            return Err(Error::VerdictCandidateMismatch {
                candidate: candidate.id.clone(),
                verdict: v.candidate_id.clone(),
            });
        }
        out.apply_factor(v.classifier_id.clone(), scaling_factor(v.probability, params)?)?;
    }
    Ok(out)
}

pub fn fuse_segmentation(candidate: &Candidate, coverage: f64, params: &FusionParams) -> Result<Candidate> {
    let mut out = candidate.clone();
    out.apply_factor(SEGMENTATION_SOURCE, segmentation_factor(coverage, params)?)?;
    Ok(out)
}

/// Candidate collection thresholds: generator score and box height both
/// strictly above their minimums.
pub fn passes_collection(candidate: &Candidate, params: &FusionParams) -> bool {
    candidate.score_generator > params.collect_min_score
        && candidate.bbox.height() > params.collect_min_height_px
}

pub fn collect_for_classification(candidates: &[Candidate], params: &FusionParams) -> Vec<Candidate> {
    candidates
        .iter()
        .filter(|c| passes_collection(c, params))
        .cloned()
        .collect()
}

/// What to do when a classifier has no verdict for a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingVerdictPolicy {
    /// Fail.
    #[default]
    Strict,
    /// Treat as neutral (factor 1, passes hard rejection).
    Lenient,
}

/// How the collection thresholds gate classifier fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Prefilter {
    #[default]
    Off,
    /// Remove candidates failing the thresholds.
    Drop,
    /// Keep them but do not consult classifiers for them.
    Skip,
}

/// All verdicts of one classifier, keyed by candidate id.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictSet {
    classifier_id: String,
    probabilities: HashMap<String, f64>,
}

impl VerdictSet {
    pub fn new(classifier_id: impl Into<String>) -> Self {
        Self {
            classifier_id: classifier_id.into(),
            probabilities: HashMap::new(),
        }
    }

    pub fn classifier_id(&self) -> &str {
        &self.classifier_id
    }

    pub fn insert(&mut self, candidate_id: impl Into<String>, probability: f64) -> Result<()> {
        check_probability("probability", probability)?;
        let candidate_id = candidate_id.into();
        if self.probabilities.contains_key(&candidate_id) {
            return Err(Error::DuplicateVerdict {
                classifier: self.classifier_id.clone(),
                candidate: candidate_id,
            });
        }
        self.probabilities.insert(candidate_id, probability);
        Ok(())
    }

    /// Groups verdicts by classifier; output is sorted by classifier id.
    pub fn group(verdicts: impl IntoIterator<Item = ClassifierVerdict>) -> Result<Vec<VerdictSet>> {
        let mut sets: BTreeMap<String, VerdictSet> = BTreeMap::new();
        for v in verdicts {
            sets.entry(v.classifier_id.clone())
                .or_insert_with(|| VerdictSet::new(v.classifier_id.clone()))
                .insert(v.candidate_id, v.probability)?;
        }
        Ok(sets.into_values().collect())
    }

    pub fn get(&self, candidate_id: &str) -> Option<f64> {
        self.probabilities.get(candidate_id).copied()
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Verdicts in ascending candidate-id order.
    pub fn verdicts(&self) -> Vec<ClassifierVerdict> {
        let mut out: Vec<_> = self
            .probabilities
            .iter()
            .map(|(id, &p)| ClassifierVerdict {
                candidate_id: id.clone(),
                classifier_id: self.classifier_id.clone(),
                probability: p,
            })
            .collect();
        out.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
        out
    }
}

/// Merges classifier outputs, rejecting two sets for the same classifier.
/// The result is sorted by classifier id.
pub fn merge_verdict_sets(sets: impl IntoIterator<Item = VerdictSet>) -> Result<Vec<VerdictSet>> {
    let mut merged: BTreeMap<String, VerdictSet> = BTreeMap::new();
    for set in sets {
        match merged.get_mut(&set.classifier_id) {
            None => {
                merged.insert(set.classifier_id.clone(), set);
            }
            Some(existing) => {
                for (id, p) in set.probabilities {
                    existing.insert(id, p)?;
                }
            }
        }
    }
    Ok(merged.into_values().collect())
}

/// A source of classifier probabilities, e.g. a network or a simulator.
pub trait VerdictProvider: Sync {
    fn classifier_id(&self) -> &str;

    /// One probability per candidate, aligned with `candidates`.
    fn classify(&self, candidates: &[Candidate]) -> Result<Vec<f64>>;
}

/// Runs every provider concurrently (one thread each) and merges the
/// results. The merged sets are identical to running the providers one after
/// another.
pub fn collect_verdicts(
    providers: &[&dyn VerdictProvider],
    candidates: &[Candidate],
) -> Result<Vec<VerdictSet>> {
    let outputs: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = providers
            .iter()
            .map(|p| scope.spawn(move || p.classify(candidates)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("verdict provider panicked"))
            .collect()
    });

    let mut sets = Vec::with_capacity(providers.len());
    for (provider, probs) in providers.iter().zip(outputs) {
        let probs = probs?;
        if probs.len() != candidates.len() {
            return Err(Error::InvalidParameter(format!(
                "classifier '{}' returned {} probabilities for {} candidates",
                provider.classifier_id(),
                probs.len(),
                candidates.len()
            )));
        }
        let mut set = VerdictSet::new(provider.classifier_id());
        for (c, p) in candidates.iter().zip(probs) {
            set.insert(c.id.clone(), p)?;
        }
        sets.push(set);
    }
    merge_verdict_sets(sets)
}

/// Configured soft/hard fusion over whole candidate pools.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FusionEngine {
    pub params: FusionParams,
    pub missing: MissingVerdictPolicy,
    pub prefilter: Prefilter,
}

impl FusionEngine {
    pub fn new(params: FusionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            ..Self::default()
        })
    }

    pub fn with_missing(mut self, missing: MissingVerdictPolicy) -> Self {
        self.missing = missing;
        self
    }

    pub fn with_prefilter(mut self, prefilter: Prefilter) -> Self {
        self.prefilter = prefilter;
        self
    }

    /// Applies the `Drop` prefilter; other modes keep every candidate.
    pub fn prefilter(&self, candidates: Vec<Candidate>) -> Vec<Candidate> {
        match self.prefilter {
            Prefilter::Drop => candidates
                .into_iter()
                .filter(|c| passes_collection(c, &self.params))
                .collect(),
            Prefilter::Off | Prefilter::Skip => candidates,
        }
    }

    fn consults_classifiers(&self, c: &Candidate) -> bool {
        self.prefilter != Prefilter::Skip || passes_collection(c, &self.params)
    }

    fn verdicts_for(&self, c: &Candidate, sets: &[VerdictSet]) -> Result<Vec<ClassifierVerdict>> {
        let mut out = Vec::with_capacity(sets.len());
        for set in sets {
            match (set.get(&c.id), self.missing) {
                (Some(p), _) => out.push(ClassifierVerdict {
                    candidate_id: c.id.clone(),
                    classifier_id: set.classifier_id.clone(),
                    probability: p,
                }),
                (None, MissingVerdictPolicy::Lenient) => {}
                (None, MissingVerdictPolicy::Strict) => {
                    return Err(Error::MissingVerdict {
                        classifier: set.classifier_id.clone(),
                        candidate: c.id.clone(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Soft classifier fusion of a pool. Candidates are processed in
    /// parallel; output order matches input order.
    pub fn fuse_classifiers(
        &self,
        candidates: Vec<Candidate>,
        sets: &[VerdictSet],
    ) -> Result<Vec<Candidate>> {
        let sets = sorted_sets(sets)?;
        self.prefilter(candidates)
            .into_par_iter()
            .map(|c| {
                if !self.consults_classifiers(&c) {
                    return Ok(c);
                }
                let verdicts = self.verdicts_for(&c, &sets)?;
                fuse_classifiers(&c, &verdicts, &self.params)
            })
            .collect()
    }

    /// Soft segmentation fusion; `coverage` returns the mask coverage of a
    /// candidate's box.
    pub fn fuse_segmentation<F>(&self, candidates: Vec<Candidate>, coverage: F) -> Result<Vec<Candidate>>
    where
        F: Fn(&Candidate) -> Result<f64> + Sync,
    {
        candidates
            .into_par_iter()
            .map(|c| fuse_segmentation(&c, coverage(&c)?, &self.params))
            .collect()
    }

    /// Hard-rejection baseline: a candidate survives only if every classifier
    /// gives it probability at least `threshold`. Scores are left untouched.
    pub fn hard_reject(
        &self,
        candidates: Vec<Candidate>,
        sets: &[VerdictSet],
        threshold: f64,
    ) -> Result<Vec<Candidate>> {
        check_open_unit("threshold", threshold)?;
        let sets = sorted_sets(sets)?;
        let mut out = Vec::new();
        for c in self.prefilter(candidates) {
            if !self.consults_classifiers(&c) {
                out.push(c);
                continue;
            }
            let verdicts = self.verdicts_for(&c, &sets)?;
            if verdicts.iter().all(|v| v.probability >= threshold) {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Hard segmentation rejection: keeps candidates whose mask coverage is at
    /// least `min_coverage`.
    pub fn hard_reject_segmentation<F>(
        &self,
        candidates: Vec<Candidate>,
        min_coverage: f64,
        coverage: F,
    ) -> Result<Vec<Candidate>>
    where
        F: Fn(&Candidate) -> Result<f64>,
    {
        let mut out = Vec::with_capacity(candidates.len());
        for c in candidates {
            let cov = coverage(&c)?;
            check_probability("coverage", cov)?;
            if cov >= min_coverage {
                out.push(c);
            }
        }
        Ok(out)
    }
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            name,
            value: v,
            domain: "(0, 1)",
        })
    }
}

fn sorted_sets(sets: &[VerdictSet]) -> Result<Vec<VerdictSet>> {
    merge_verdict_sets(sets.iter().cloned())
}

/// Hard rejection with default engine settings (strict verdicts, no prefilter).
pub fn hard_reject(candidates: &[Candidate], sets: &[VerdictSet], threshold: f64) -> Result<Vec<Candidate>> {
    FusionEngine::default().hard_reject(candidates.to_vec(), sets, threshold)
}

/// Greedy non-maximum suppression within one frame: keep the best-ranked
/// candidate, drop everything overlapping it by more than `iou_threshold`,
/// repeat. Output is in ranking order.
pub fn nms(mut candidates: Vec<Candidate>, iou_threshold: f64) -> Result<Vec<Candidate>> {
    check_open_unit("iou_threshold", iou_threshold)?;
    candidates.sort_by(rank_order);
    let mut suppressed = vec![false; candidates.len()];
    let mut keep = Vec::new();
    for i in 0..candidates.len() {
        if suppressed[i] {
            continue;
        }
        for j in i + 1..candidates.len() {
            if !suppressed[j] && jaccard(&candidates[i].bbox, &candidates[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
        keep.push(i);
    }
    let mut slots: Vec<Option<Candidate>> = candidates.into_iter().map(Some).collect();
    Ok(keep.into_iter().filter_map(|i| slots[i].take()).collect())
}

/// [`nms`] applied independently to each frame; frames come out in ascending
/// frame-id order.
pub fn nms_per_frame(candidates: Vec<Candidate>, iou_threshold: f64) -> Result<Vec<Candidate>> {
    check_open_unit("iou_threshold", iou_threshold)?;
    let mut frames: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    for c in candidates {
        frames.entry(c.frame_id.clone()).or_default().push(c);
    }
    let kept: Vec<Vec<Candidate>> = frames
        .into_values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|f| nms(f, iou_threshold))
        .collect::<Result<_>>()?;
    Ok(kept.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> FusionParams {
        FusionParams::default()
    }

    fn cand(id: &str, score: f64) -> Candidate {
        Candidate::new(id, "f", BoundingBox::new(0.0, 0.0, 20.0, 50.0).unwrap(), score).unwrap()
    }

    fn verdict(cls: &str, p: f64) -> ClassifierVerdict {
        ClassifierVerdict::new("c", cls, p).unwrap()
    }

    #[test]
    fn scaling_factor_examples() {
        let p = params();
        assert_eq!(scaling_factor(0.7, &p).unwrap(), 1.0);
        assert_eq!(scaling_factor(0.0, &p).unwrap(), 0.1);
        assert!((scaling_factor(1.0, &p).unwrap() - 1.0 / 0.7).abs() < 1e-12);
        assert!(scaling_factor(1.01, &p).is_err());
        assert!(scaling_factor(-0.1, &p).is_err());
    }

    #[test]
    fn classifier_fusion_examples() {
        let p = params();
        let out = fuse_classifiers(&cand("c", 0.5), &[verdict("a", 0.7), verdict("b", 0.7)], &p).unwrap();
        assert!((out.score_fused() - 0.5).abs() < 1e-12);
        let out = fuse_classifiers(&cand("c", 0.8), &[verdict("a", 0.7), verdict("b", 0.35)], &p).unwrap();
        assert!((out.score_fused() - 0.4).abs() < 1e-12);
        let out = fuse_classifiers(&cand("c", 0.9), &[verdict("a", 0.0), verdict("b", 0.0)], &p).unwrap();
        assert!((out.score_fused() - 0.009).abs() < 1e-12);
        assert_eq!(out.applied_factors().len(), 2);
        assert_eq!(out.applied_factors()[0].source, "a");
        assert_eq!(out.score_generator(), 0.9);
    }

    #[test]
    fn classifier_fusion_errors() {
        let p = params();
        let dup = fuse_classifiers(&cand("c", 0.5), &[verdict("a", 0.2), verdict("a", 0.9)], &p);
        assert!(matches!(dup, Err(Error::DuplicateVerdict { .. })));
        let other = ClassifierVerdict::new("x", "a", 0.5).unwrap();
        let mismatch = fuse_classifiers(&cand("c", 0.5), &[other], &p);
        assert!(matches!(mismatch, Err(Error::VerdictCandidateMismatch { .. })));
    }

    #[test]
    fn segmentation_examples() {
        let p = params();
        let c = cand("c", 0.6);
        assert_eq!(fuse_segmentation(&c, 0.5, &p).unwrap().score_fused(), 0.6);
        assert!((fuse_segmentation(&c, 0.0, &p).unwrap().score_fused() - 0.6 * 0.35).abs() < 1e-12);
        assert!((fuse_segmentation(&c, 0.1, &p).unwrap().score_fused() - 0.6 * 0.4).abs() < 1e-12);
        // discontinuity: exactly at the accept ratio the slope branch applies
        assert!((segmentation_factor(0.2, &p).unwrap() - 0.8).abs() < 1e-12);
        assert!(fuse_segmentation(&c, 1.2, &p).is_err());
        let f = fuse_segmentation(&c, 0.5, &p).unwrap();
        assert_eq!(f.applied_factors()[0].source, SEGMENTATION_SOURCE);
    }

    #[test]
    fn collection_thresholds_are_strict() {
        let p = params();
        let mk =
            |score, h| Candidate::new("c", "f", BoundingBox::new(0.0, 0.0, 10.0, h).unwrap(), score).unwrap();
        assert!(passes_collection(&mk(0.5, 100.0), &p));
        assert!(!passes_collection(&mk(0.005, 100.0), &p));
        assert!(!passes_collection(&mk(0.01, 100.0), &p));
        assert!(!passes_collection(&mk(0.5, 40.0), &p));
        assert_eq!(
            collect_for_classification(&[mk(0.5, 100.0), mk(0.5, 40.0)], &p).len(),
            1
        );
    }

    fn sets(entries: &[(&str, &[(&str, f64)])]) -> Vec<VerdictSet> {
        entries
            .iter()
            .map(|(cls, vs)| {
                let mut s = VerdictSet::new(*cls);
                for (id, p) in vs.iter() {
                    s.insert(*id, *p).unwrap();
                }
                s
            })
            .collect()
    }

    #[test]
    fn hard_rejection_examples() {
        let c = vec![cand("c", 0.5)];
        let ok = sets(&[("a", &[("c", 0.9)]), ("b", &[("c", 0.6)])]);
        assert_eq!(hard_reject(&c, &ok, 0.5).unwrap().len(), 1);
        let bad = sets(&[("a", &[("c", 0.9)]), ("b", &[("c", 0.4)])]);
        assert!(hard_reject(&c, &bad, 0.5).unwrap().is_empty());
        assert_eq!(hard_reject(&c, &[], 0.5).unwrap().len(), 1);
        assert!(hard_reject(&c, &ok, 1.0).is_err());
    }

    #[test]
    fn missing_verdict_policy() {
        let pool = vec![cand("c", 0.5), cand("d", 0.5)];
        let s = sets(&[("a", &[("c", 0.0)])]);
        let strict = FusionEngine::default();
        assert!(matches!(
            strict.fuse_classifiers(pool.clone(), &s),
            Err(Error::MissingVerdict { .. })
        ));
        let lenient = strict.with_missing(MissingVerdictPolicy::Lenient);
        let out = lenient.fuse_classifiers(pool.clone(), &s).unwrap();
        assert!((out[0].score_fused() - 0.05).abs() < 1e-12);
        assert_eq!(out[1].score_fused(), 0.5);
        assert!(out[1].applied_factors().is_empty());
        assert_eq!(lenient.hard_reject(pool, &s, 0.5).unwrap().len(), 1);
    }

    #[test]
    fn prefilter_modes() {
        let p = params();
        let small = Candidate::new("s", "f", BoundingBox::new(0.0, 0.0, 10.0, 30.0).unwrap(), 0.5).unwrap();
        let pool = vec![cand("c", 0.5), small];
        let s = sets(&[("a", &[("c", 0.0), ("s", 0.0)])]);
        let drop = FusionEngine::new(p).unwrap().with_prefilter(Prefilter::Drop);
        let out = drop.fuse_classifiers(pool.clone(), &s).unwrap();
        assert_eq!(out.len(), 1);
        let skip = FusionEngine::new(p).unwrap().with_prefilter(Prefilter::Skip);
        let out = skip.fuse_classifiers(pool.clone(), &s).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].score_fused(), 0.5);
        assert!((out[0].score_fused() - 0.05).abs() < 1e-12);
        // skipped candidates are not subject to hard rejection either
        assert_eq!(skip.hard_reject(pool, &s, 0.5).unwrap().len(), 1);
    }

    #[test]
    fn duplicate_verdicts_rejected_by_set() {
        let mut s = VerdictSet::new("a");
        s.insert("c", 0.1).unwrap();
        assert!(s.insert("c", 0.2).is_err());
        assert!(s.insert("d", 1.2).is_err());
        assert!(merge_verdict_sets(vec![s.clone(), s]).is_err());
    }

    #[test]
    fn nms_examples() {
        let one = nms(vec![cand("a", 0.9)], 0.5).unwrap();
        assert_eq!(one.len(), 1);
        let kept = nms(vec![cand("b", 0.8), cand("a", 0.9)], 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "a");
        let far = Candidate::new("b", "f", BoundingBox::new(100.0, 0.0, 20.0, 50.0).unwrap(), 0.8).unwrap();
        assert_eq!(nms(vec![cand("a", 0.9), far], 0.5).unwrap().len(), 2);
        // equal scores: lower id wins
        let kept = nms(vec![cand("z", 0.5), cand("m", 0.5)], 0.5).unwrap();
        assert_eq!(kept[0].id, "m");
    }

    #[test]
    fn nms_per_frame_keeps_frames_apart() {
        let mut b = cand("b", 0.8);
        b.frame_id = "g".into();
        let out = nms_per_frame(vec![cand("a", 0.9), b], 0.5).unwrap();
        assert_eq!(out.len(), 2);
    }

    struct Fixed(&'static str, f64);

    impl VerdictProvider for Fixed {
        fn classifier_id(&self) -> &str {
            self.0
        }
        fn classify(&self, candidates: &[Candidate]) -> Result<Vec<f64>> {
            Ok(candidates
                .iter()
                .map(|c| (c.score_generator() * self.1).min(1.0))
                .collect())
        }
    }

    #[test]
    fn concurrent_providers_match_sequential() {
        let pool: Vec<_> = (0..50)
            .map(|i| cand(&format!("c{i:02}"), i as f64 / 50.0))
            .collect();
        let providers: [&dyn VerdictProvider; 2] = [&Fixed("z", 1.3), &Fixed("a", 0.4)];
        let parallel = collect_verdicts(&providers, &pool).unwrap();
        let mut sequential = Vec::new();
        for p in providers {
            let mut s = VerdictSet::new(p.classifier_id());
            for (c, v) in pool.iter().zip(p.classify(&pool).unwrap()) {
                s.insert(c.id.clone(), v).unwrap();
            }
            sequential.push(s);
        }
        let sequential = merge_verdict_sets(sequential).unwrap();
        assert_eq!(parallel, sequential);
        let engine = FusionEngine::default();
        let a = engine.fuse_classifiers(pool.clone(), &parallel).unwrap();
        let b: Vec<_> = pool
            .iter()
            .map(|c| {
                let vs: Vec<_> = sequential
                    .iter()
                    .map(|s| {
                        ClassifierVerdict::new(c.id.clone(), s.classifier_id(), s.get(&c.id).unwrap())
                            .unwrap()
                    })
                    .collect();
                fuse_classifiers(c, &vs, &engine.params).unwrap()
            })
            .collect();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn fusion_invariants(
            score in 0.0..=1.0f64,
            probs in proptest::collection::vec(0.0..=1.0f64, 0..6),
            coverage in 0.0..=1.0f64,
            bump in 0.0..=1.0f64,
            rot in 0usize..6,
        ) {
            let p = params();
            let verdicts: Vec<_> = probs.iter().enumerate()
                .map(|(i, &q)| ClassifierVerdict::new("c", format!("k{i}"), q).unwrap())
                .collect();
            let c = cand("c", score);
            let fused = fuse_classifiers(&c, &verdicts, &p).unwrap();
            prop_assert!((fused.score_fused() - fused.recomputed_score()).abs() <= 1e-12);
            for f in fused.applied_factors() {
                prop_assert!(f.factor >= p.b_c && f.factor <= 1.0 / p.a_c);
            }

            let mut rotated = verdicts.clone();
            if !rotated.is_empty() {
                let k = rot % rotated.len();
                rotated.rotate_left(k);
                rotated.reverse();
            }
            let again = fuse_classifiers(&c, &rotated, &p).unwrap();
            prop_assert_eq!(again.score_fused(), fused.score_fused());

            if !verdicts.is_empty() {
                let mut higher = verdicts.clone();
                higher[0].probability = (higher[0].probability + bump).min(1.0);
                let up = fuse_classifiers(&c, &higher, &p).unwrap();
                prop_assert!(up.score_fused() >= fused.score_fused());
            }

            let all = fuse_segmentation(&fused, coverage, &p).unwrap();
            let ss = all.applied_factors().last().unwrap().factor;
            prop_assert!((p.b_ss..=1.0).contains(&ss));
            if score > 0.0 {
                let floor = score * p.b_c.powi(probs.len() as i32) * p.b_ss;
                prop_assert!(all.score_fused() > 0.0);
                prop_assert!(all.score_fused() >= floor * (1.0 - 1e-12));
            }
        }

        #[test]
        fn neutral_classifier_changes_nothing(scores in proptest::collection::vec(0.0..=1.0f64, 1..20)) {
            let pool: Vec<_> = scores.iter().enumerate().map(|(i, &s)| cand(&format!("c{i}"), s)).collect();
            let mut s = VerdictSet::new("n");
            for c in &pool {
                s.insert(c.id.clone(), 0.7).unwrap();
            }
            let out = FusionEngine::default().fuse_classifiers(pool.clone(), &[s]).unwrap();
            for (a, b) in pool.iter().zip(&out) {
                prop_assert_eq!(a.score_fused(), b.score_fused());
            }
        }

        #[test]
        fn hard_survivors_have_positive_soft_scores(
            entries in proptest::collection::vec((0.001..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 1..30)
        ) {
            let pool: Vec<_> = entries.iter().enumerate().map(|(i, e)| cand(&format!("c{i}"), e.0)).collect();
            let mut a = VerdictSet::new("a");
            let mut b = VerdictSet::new("b");
            for (c, e) in pool.iter().zip(&entries) {
                a.insert(c.id.clone(), e.1).unwrap();
                b.insert(c.id.clone(), e.2).unwrap();
            }
            let sets = vec![a, b];
            let engine = FusionEngine::default();
            let soft = engine.fuse_classifiers(pool.clone(), &sets).unwrap();
            let hard = engine.hard_reject(pool.clone(), &sets, 0.5).unwrap();
            prop_assert_eq!(soft.len(), pool.len());
            for h in &hard {
                let s = soft.iter().find(|s| s.id == h.id).unwrap();
                prop_assert!(s.score_fused() > 0.0);
                prop_assert_eq!(h.score_fused(), h.score_generator());
            }
        }
    }
}
