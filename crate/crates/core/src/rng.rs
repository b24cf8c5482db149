//! Seeded random streams and the Gamma/Dirichlet samplers.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, tag, a, b)` (typically tag = update kind, a = sweep, b = individual).
//! Per-individual work can therefore run on any number of threads and still
//! produce the same draws as a sequential run.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

pub mod tag {
    pub const GENERATE: u64 = 1;
    pub const IMPUTE_Z: u64 = 2;
    pub const LAMBDA: u64 = 3;
    pub const MEMBERSHIP: u64 = 4;
    pub const ALPHA0: u64 = 5;
    pub const XI: u64 = 6;
    pub const COMPARTMENT: u64 = 7;
    pub const INIT: u64 = 8;
    pub const EXPECTED: u64 = 9;
    pub const MONTE_CARLO: u64 = 10;
    pub const SWEEP_K: u64 = 11;
    pub const LCM_RESTART: u64 = 12;
    pub const VEM: u64 = 13;
    pub const CHECK: u64 = 14;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the key into a single 64-bit seed.
#[inline]
pub fn derive_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix64(h ^ a.wrapping_mul(0xA076_1D64_78BD_642F));
    splitmix64(h ^ b.wrapping_mul(0xE703_7ED1_A0B4_28DB))
}

#[inline]
pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tag, a, b))
}

/// Uniform on (0, 1].
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Log of a standard Gamma(shape, 1) variate.
///
/// Shapes below one use the boost `G(a) = G(a + 1) U^(1/a)`, carried out in
/// log space so that very small shapes do not underflow to `ln 0`.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && shape.is_finite());
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        g.ln() + open_unit(rng).ln() / shape
    }
}

/// Draws `g ~ Dirichlet(alpha)` into `g`, writing the exact logs into `log_g`.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R, g: &mut [f64], log_g: &mut [f64]) {
    debug_assert_eq!(alpha.len(), g.len());
    debug_assert_eq!(alpha.len(), log_g.len());
    let mut max = f64::NEG_INFINITY;
    for (lg, &a) in log_g.iter_mut().zip(alpha) {
        *lg = sample_log_gamma(a, rng);
        if *lg > max {
            max = *lg;
        }
    }
    let mut total = 0.0;
    for (gk, &lg) in g.iter_mut().zip(log_g.iter()) {
        *gk = (lg - max).exp();
        total += *gk;
    }
    let log_total = total.ln();
    for (gk, lg) in g.iter_mut().zip(log_g.iter_mut()) {
        *gk /= total;
        *lg = *lg - max - log_total;
    }
}

/// Convenience wrapper returning a fresh vector.
pub fn dirichlet_vec<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut g = vec![0.0; alpha.len()];
    let mut lg = vec![0.0; alpha.len()];
    sample_dirichlet(alpha, rng, &mut g, &mut lg);
    g
}

/// Index drawn with probability proportional to `weights` (which must have a positive sum).
#[inline]
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // rounding can leave u == total; return the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}
