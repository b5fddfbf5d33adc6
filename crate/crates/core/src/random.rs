//! Seeded random sources and proper complex Gaussian draws.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type LabRng = ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`.
///
/// Independent streams let work be partitioned into chunks whose results do
/// not depend on how many threads execute them.
pub fn stream_rng(seed: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw from CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<Complex64> {
    (0..len).map(|_| complex_normal(rng)).collect()
}

pub fn complex_normal_dvec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<Complex64> {
    DVector::from_iterator(len, (0..len).map(|_| complex_normal(rng)))
}
