//! Shared fixtures for the kernel benchmarks.

use magr_core::pipeline::synth::{synth_layer_with, SynthSpec};
use magr_core::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A synthetic layer as `(weights, hessian)`, with half-rank features and
/// 1% outliers.
pub fn layer_fixture(m: usize, n: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
    let layer = synth_layer_with("bench", &SynthSpec::new(m, n, 2 * m, 0.5, 0.01), seed)
        .expect("valid synthetic spec");
    let h = layer
        .features
        .as_ref()
        .expect("synthetic layers carry features")
        .gram()
        .expect("gram of a small matrix");
    (layer.weights, h)
}

/// Seeded vector with entries uniform in `[-1, 1)`.
pub fn vector_fixture(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}
