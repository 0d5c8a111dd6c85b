//! Seeded input generators shared by the kernel benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalefuse::classify::LabeledSet;
use scalefuse::PatchFeatureSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform activations in `[0, 1)` for one image at one scale.
pub fn patch_set(num_patches: usize, dim: usize, seed: u64) -> PatchFeatureSet {
    let mut r = rng(seed);
    let m = Array2::from_shape_fn((num_patches, dim), |_| r.random::<f32>());
    PatchFeatureSet::new("bench", 227, "bench", m).expect("nonempty")
}

pub fn gaussian_like(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    // Sum of uniforms is close enough to Gaussian for timing purposes.
    Array2::from_shape_fn((n, d), |_| (0..4).map(|_| r.random::<f64>()).sum::<f64>() - 2.0)
}

/// Blobs around shifted centers, `per_class` rows per category.
pub fn blobs(classes: usize, per_class: usize, dim: usize, seed: u64) -> LabeledSet {
    let mut x = gaussian_like(classes * per_class, dim, seed);
    let labels: Vec<usize> = (0..classes * per_class).map(|i| i / per_class).collect();
    for (mut row, &c) in x.rows_mut().into_iter().zip(&labels) {
        row[c % dim] += 3.0;
    }
    LabeledSet::new(x, labels, classes).expect("valid labels")
}
