use std::collections::HashMap;

use pedfuse_core::eval::{compute_curve, Corpus};
use pedfuse_core::fusion::FusionEngine;
use pedfuse_core::io;
use pedfuse_core::pipeline::{run_pipeline, MaskSource, PipelineOptions, Rejection, RunConfig};
use pedfuse_core::sim::{
    generate_corpus, simulate_verdict_set, synthesize_mask, CorpusConfig, SimClassifierSpec, SimRng,
    SyntheticScene,
};
use pedfuse_core::{
    BoundingBox, Candidate, EvalSetting, GroundTruthAnnotation, SegmentationMask, VerdictSet,
};

fn scenes(frames: usize, seed: u64) -> Vec<SyntheticScene> {
    generate_corpus(&CorpusConfig {
        frames,
        seed,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn flatten(scenes: &[SyntheticScene]) -> (Vec<Candidate>, Vec<GroundTruthAnnotation>, Vec<String>) {
    (
        scenes.iter().flat_map(|s| s.candidates.clone()).collect(),
        scenes.iter().flat_map(|s| s.gt.clone()).collect(),
        scenes.iter().map(|s| s.frame_id.clone()).collect(),
    )
}

fn noisy_sets(scenes: &[SyntheticScene], n: usize) -> Vec<VerdictSet> {
    (0..n)
        .map(|i| {
            let spec = SimClassifierSpec::noisy(format!("n{i}"), 0.85, 0.15, 100 + i as u64).unwrap();
            simulate_verdict_set(scenes, &spec, 0.7).unwrap()
        })
        .collect()
}

#[test]
fn fusing_all_sets_at_once_equals_chaining() {
    let sc = scenes(40, 1);
    let (cands, _, _) = flatten(&sc);
    let sets = noisy_sets(&sc, 3);
    let engine = FusionEngine::default();

    let at_once = engine.fuse_classifiers(cands.clone(), &sets).unwrap();
    let mut chained = cands;
    for set in &sets {
        chained = engine
            .fuse_classifiers(chained, std::slice::from_ref(set))
            .unwrap();
    }
    let by_id: HashMap<_, _> = chained.iter().map(|c| (c.id.clone(), c.score_fused())).collect();
    assert_eq!(at_once.len(), by_id.len());
    for c in &at_once {
        assert!((c.score_fused() - by_id[&c.id]).abs() < 1e-12, "{}", c.id);
    }
}

#[test]
fn oracle_fusion_improves_on_generator_alone() {
    let sc = scenes(100, 2);
    let (cands, gt, frames) = flatten(&sc);
    let options = PipelineOptions::default();
    let oracle = simulate_verdict_set(&sc, &SimClassifierSpec::oracle("o"), 0.7).unwrap();

    let fused = options.fuse(cands.clone(), &[oracle], None).unwrap();
    let with = options
        .evaluate(fused, gt.clone(), frames.clone())
        .unwrap()
        .lamr();
    let without = options.evaluate(cands, gt, frames).unwrap().lamr();
    assert!(with < without, "{with} vs {without}");
}

#[test]
fn file_run_matches_in_memory_run() {
    let sc = scenes(30, 3);
    let (cands, gt, frames) = flatten(&sc);
    let sets = noisy_sets(&sc, 2);
    let masks: HashMap<String, SegmentationMask> = sc
        .iter()
        .map(|s| (s.frame_id.clone(), synthesize_mask(s, 0.6).unwrap()))
        .collect();

    let dir = tempfile::tempdir().unwrap();
    let det_path = dir.path().join("dets.jsonl");
    let gt_path = dir.path().join("gt.jsonl");
    io::write_detections_file(&det_path, &cands).unwrap();
    io::write_annotations_file(&gt_path, &gt).unwrap();
    let mut verdict_files = Vec::new();
    for set in &sets {
        let p = dir.path().join(format!("{}.jsonl", set.classifier_id()));
        io::write_verdicts_file(&p, set).unwrap();
        verdict_files.push(p);
    }
    let mask_dir = dir.path().join("masks");
    std::fs::create_dir(&mask_dir).unwrap();
    for m in masks.values() {
        io::write_mask(io::mask_path(&mask_dir, &m.frame_id), m).unwrap();
    }

    for rejection in [Rejection::Soft, Rejection::Hard] {
        let options = PipelineOptions {
            rejection,
            nms_iou: Some(0.5),
            ..PipelineOptions::default()
        };
        let from_files = run_pipeline(&RunConfig {
            detections: det_path.clone(),
            annotations: Some(gt_path.clone()),
            verdict_files: verdict_files.clone(),
            mask_dir: Some(mask_dir.clone()),
            options: options.clone(),
        })
        .unwrap();
        let in_memory = options
            .fuse(cands.clone(), &sets, Some(&masks as &dyn MaskSource))
            .unwrap();
        let curve = options
            .evaluate(in_memory.clone(), gt.clone(), frames.clone())
            .unwrap();
        assert_eq!(from_files.detections, in_memory);
        assert_eq!(from_files.curve.unwrap(), curve);
    }
}

#[test]
fn curve_ignores_input_order() {
    let sc = scenes(50, 4);
    let (mut cands, gt, _) = flatten(&sc);
    let setting = EvalSetting::reasonable();
    let reference = compute_curve(&Corpus::new(cands.clone(), gt.clone()), &setting, 0.5).unwrap();
    let mut rng = SimRng::new(4);
    for j in (1..cands.len()).rev() {
        cands.swap(j, rng.int_inclusive(0, j));
    }
    let shuffled = compute_curve(&Corpus::new(cands, gt), &setting, 0.5).unwrap();
    assert_eq!(reference, shuffled);
}

#[test]
fn dropping_false_positives_never_raises_lamr() {
    let sc = scenes(80, 5);
    let (cands, gt, frames) = flatten(&sc);
    let options = PipelineOptions::default();
    let labels: Vec<bool> = sc.iter().flat_map(|s| s.labels()).collect();
    let positives: Vec<Candidate> = cands
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l)
        .map(|(c, _)| c.clone())
        .collect();
    let all = options
        .evaluate(cands, gt.clone(), frames.clone())
        .unwrap()
        .lamr();
    let clean = options.evaluate(positives, gt, frames).unwrap().lamr();
    assert!(clean <= all, "{clean} > {all}");
}

#[test]
fn extra_detection_on_a_missed_pedestrian_never_raises_lamr() {
    let sc = scenes(60, 6);
    let (mut cands, gt, frames) = flatten(&sc);
    let options = PipelineOptions::default();
    let g = &gt[0];
    let b = g.bbox;
    cands.retain(|c| !(c.frame_id == g.frame_id && pedfuse_core::jaccard(&c.bbox, &b) >= 0.5));
    let missing = options
        .evaluate(cands.clone(), gt.clone(), frames.clone())
        .unwrap()
        .lamr();
    cands.push(
        Candidate::new(
            "extra",
            g.frame_id.clone(),
            BoundingBox::new(b.x(), b.y(), b.width(), b.height()).unwrap(),
            0.99,
        )
        .unwrap(),
    );
    let after = options.evaluate(cands, gt, frames).unwrap().lamr();
    assert!(after <= missing, "{after} > {missing}");
}
