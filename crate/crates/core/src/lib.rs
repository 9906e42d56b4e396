//! Soft-rejection fusion of pedestrian detection scores and Caltech-style
//! evaluation.
//!
//! A high-recall candidate generator produces scored boxes. Secondary
//! classifiers and a segmentation mask then rescale those scores by bounded
//! multiplicative factors instead of accepting or rejecting candidates
//! outright. [`eval`] scores the result with miss-rate-vs-FPPI curves and the
//! log-average miss rate; [`sim`] provides seeded synthetic scenes and
//! classifiers for experiments without trained networks.

pub mod anchors;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
pub use eval::{compute_curve, compute_lamr, Corpus, EvalSetting, MissRateCurve};
pub use fusion::{
    fuse_classifiers, fuse_segmentation, scaling_factor, Candidate, ClassifierVerdict, FusionEngine,
    FusionParams, VerdictSet,
};
pub use geometry::{
    jaccard, label_candidates, mask_coverage, BoundingBox, Category, GroundTruthAnnotation, SegmentationMask,
};
pub use pipeline::{run_pipeline, PipelineOptions, PipelineOutput, RunConfig};
