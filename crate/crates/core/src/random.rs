//! Seeded random helpers shared by initialization, data generation and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Mat;

pub type DmtRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DmtRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw (Box-Muller).
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn gaussian_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| std * gaussian(rng))
}

pub fn uniform_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

/// Random SPD matrix `GGᵀ/d + ridge·I` with Gaussian `G`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, d: usize, ridge: f64) -> Mat {
    let g = gaussian_mat(rng, d, d, 1.0);
    g.matmul_t(&g)
        .expect("square")
        .scale(1.0 / d as f64)
        .add_identity(ridge)
        .symmetrize()
}
