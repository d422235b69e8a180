//! Seeded random streams.
//!
//! Every randomized routine takes an explicit `u64` seed. Independent
//! sub-streams (per trial, per restart, per purpose) are derived by mixing
//! the parent seed with an index, so parallel execution draws exactly the
//! same numbers as serial execution.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for sub-stream `index` of `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    // Row-major fill so the draw order is independent of nalgebra's storage.
    let mut m = DMatrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Uniform direction on the unit sphere in `d` dimensions.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = normal_vector(rng, d);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Haar-distributed orthogonal matrix via QR of a Gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`.
pub fn orthogonal_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let g = normal_matrix(rng, d, d);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `x + scale · G / ||G||_F` for a Gaussian matrix `G`.
pub fn perturb<R: Rng + ?Sized>(x: &DMatrix<f64>, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let g = normal_matrix(rng, x.nrows(), x.ncols());
    x + &g * (scale / g.norm())
}
