//! Fixtures for the regioncal benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regioncal_core::dataset::random_forest;
use regioncal_core::{CalibrationParams, RegionForest, ScoreMatrix, SigmoidParams};

/// A random forest over `leaves` superpixels with uniform random scores for
/// `classes` classes and random per-class calibrations.
pub fn scored_forest(
    leaves: usize,
    classes: usize,
    seed: u64,
) -> (RegionForest, ScoreMatrix, CalibrationParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels: Vec<u64> = (0..leaves).map(|_| rng.random_range(20..60)).collect();
    let forest = random_forest(&mut rng, &pixels, 2, 12);
    let values = (0..forest.len() * classes)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let scores = ScoreMatrix::new(forest.len(), classes, values).expect("finite scores");
    let params = CalibrationParams::from_vec(
        (0..classes)
            .map(|_| SigmoidParams {
                a: rng.random_range(-12.0..-2.0),
                b: rng.random_range(-10.0..10.0),
            })
            .collect(),
    );
    (forest, scores, params)
}
