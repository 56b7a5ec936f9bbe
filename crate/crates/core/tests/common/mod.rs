#![allow(dead_code)]

pub mod gradcheck;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sctreid::encoder::BatchFeatures;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn batch(rows: usize, width: usize, locals: usize, rng: &mut ChaCha8Rng) -> BatchFeatures {
    BatchFeatures {
        global: normal(rows, width, 1.0, rng),
        locals: (0..locals).map(|_| normal(rows, width, 1.0, rng)).collect(),
    }
}
