//! Seeded inputs shared by the benchmarks.

use posecast_core::autodiff::Tensor;
use posecast_core::encodings::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A `rows × cols` tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new([rows, cols], data).expect("shape matches data")
}

/// A random walk of `len` points with unit-scale steps.
pub fn random_walk(len: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = [0.0; 3];
    (0..len)
        .map(|_| {
            for c in &mut p {
                *c += rng.random_range(-1.0..1.0);
            }
            p
        })
        .collect()
}
