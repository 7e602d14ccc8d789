//! Seeded weight initialization.
//!
//! Every random draw in the engine flows through a `ChaCha8Rng` seeded from
//! the run configuration, so identical seeds reproduce identical weights,
//! shuffles, and synthetic data bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor4;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task (per-tile generation,
/// per-epoch shuffles) without correlating with the parent stream.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fan-in scaled Gaussian init: std = sqrt(2 / fan_in).
pub fn he_normal(dims: (usize, usize, usize, usize), fan_in: usize, rng: &mut SeededRng) -> Tensor4 {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std is positive and finite");
    let mut t = Tensor4::zeros(dims).expect("dims validated by caller");
    for v in t.data_mut() {
        *v = normal.sample(rng) as f32;
    }
    t
}

/// Uniform values in `[-1, 1]`, used for fixed gradient-check projections.
pub fn uniform_pm1(dims: (usize, usize, usize, usize), rng: &mut SeededRng) -> Tensor4 {
    let mut t = Tensor4::zeros(dims).expect("dims validated by caller");
    for v in t.data_mut() {
        *v = rng.gen_range(-1.0..=1.0);
    }
    t
}
