//! Seeded random number generation.
//!
//! Every random quantity in the crate is drawn from [`ChaCha8Rng`] seeded with
//! `seed_from_u64`. Standard normals come from `rand_distr::StandardNormal`,
//! which uses the Ziggurat method. Results are reproducible within a build;
//! bit-exactness across languages or crate versions is not promised.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Golden-ratio increment used to spread derived seeds over the 64-bit space.
pub const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `base + k * 0x9E3779B97F4A7C15 (mod 2^64)`.
pub fn derive_seed(base: u64, k: u64) -> u64 {
    base.wrapping_add(k.wrapping_mul(SEED_STRIDE))
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample(StandardNormal))
}

/// Row-major fill, so the first row consumes the first `cols` draws.
pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Uniform direction on the unit sphere (normalized Gaussian).
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<f64> {
    loop {
        let g = normal_vec(rng, n);
        let norm = g.dot(&g).sqrt();
        if norm > 0.0 {
            return g / norm;
        }
    }
}
