//! Seeded inputs for the benchmarks.

use ctcssl::{FeatureMatrix, LabelSequence, LogProbMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_posteriors(frames: usize, labels: usize, seed: u64) -> LogProbMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = (0..frames * labels).map(|_| rng.random_range(-3.0..3.0)).collect();
    LogProbMatrix::from_logits(frames, labels, logits).expect("valid shape")
}

pub fn random_features(frames: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMatrix::new(frames, dim, data).expect("valid shape")
}

/// Non-blank symbols in `1..labels` with no immediate repeats.
pub fn random_target(len: usize, labels: usize, seed: u64) -> LabelSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = Vec::with_capacity(len);
    while out.len() < len {
        let s = rng.random_range(1..labels);
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    LabelSequence::from_symbols(out)
}
