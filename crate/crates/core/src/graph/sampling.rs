//! Sampling of the loss trade-off parameters.
//!
//! `rho` is log-uniform on `[RHO_MIN, RHO_MAX]` and `alpha` follows
//! `Beta(1/2, 1/2)`, drawn by inverting its CDF `F(x) = (2/pi) asin(sqrt(x))`.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

pub const RHO_MIN: f64 = 1e-7;
pub const RHO_MAX: f64 = 1.0;

/// Maps `u` in `[0, 1]` to a log-uniform `rho`.
pub fn rho_from_uniform(u: f64) -> f64 {
    let (lo, hi) = (RHO_MIN.ln(), RHO_MAX.ln());
    (u * (hi - lo) + lo).exp()
}

/// Maps `u` in `[0, 1]` to an arcsine-distributed `alpha`.
pub fn alpha_from_uniform(u: f64) -> f64 {
    (FRAC_PI_2 * u).sin().powi(2)
}

/// `(alpha, rho)` from two uniforms.
pub fn params_from_uniforms(u_rho: f64, u_alpha: f64) -> (f64, f64) {
    (alpha_from_uniform(u_alpha), rho_from_uniform(u_rho))
}

/// Draws `(alpha, rho)`.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let u_rho: f64 = rng.random();
    let u_alpha: f64 = rng.random();
    params_from_uniforms(u_rho, u_alpha)
}

/// Deterministic child seed, so that per-item generation does not depend on
/// iteration order.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
