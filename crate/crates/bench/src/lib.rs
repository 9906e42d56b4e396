//! Workload builders shared by the criterion benches.

use pedfuse_core::eval::Corpus;
use pedfuse_core::fusion::{Candidate, VerdictSet};
use pedfuse_core::sim::{generate_corpus, CorpusConfig, SimRng};
use pedfuse_core::BoundingBox;

/// `n` candidates spread over frames of 100, with two full verdict sets.
pub fn fusion_workload(n: usize, seed: u64) -> (Vec<Candidate>, Vec<VerdictSet>) {
    let mut rng = SimRng::new(seed);
    let mut a = VerdictSet::new("a");
    let mut b = VerdictSet::new("b");
    let candidates: Vec<Candidate> = (0..n)
        .map(|i| {
            let h = rng.range(20.0, 300.0);
            let bbox = BoundingBox::new(rng.range(0.0, 600.0), rng.range(0.0, 400.0), 0.41 * h, h)
                .expect("positive size");
            let c = Candidate::new(
                format!("c{i:07}"),
                format!("f{:05}", i / 100),
                bbox,
                rng.uniform(),
            )
            .expect("score in range");
            a.insert(c.id.clone(), rng.uniform()).expect("unique id");
            b.insert(c.id.clone(), rng.uniform()).expect("unique id");
            c
        })
        .collect();
    (candidates, vec![a, b])
}

/// Simulated evaluation corpus with default scene settings.
pub fn eval_corpus(frames: usize, seed: u64) -> Corpus {
    let scenes = generate_corpus(&CorpusConfig {
        frames,
        seed,
        ..CorpusConfig::default()
    })
    .expect("default scene config is feasible");
    let (dets, gt): (Vec<_>, Vec<_>) = scenes.into_iter().map(|s| (s.candidates, s.gt)).unzip();
    Corpus::new(
        dets.into_iter().flatten().collect(),
        gt.into_iter().flatten().collect(),
    )
}
