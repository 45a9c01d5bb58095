//! Gamma variates by the Marsaglia–Tsang squeeze method.
//!
//! Shapes below one use the boosting identity
//! `Gamma(a) = Gamma(a + 1) * U^(1/a)`, carried out in log space so that very
//! small shapes (small miners, `n0/R << 1`) do not underflow before
//! normalisation.

use rand_core::RngCore;

use crate::error::{invalid, Result};
use crate::rng::{standard_normal, uniform, uniform_open0};

/// Natural log of a Gamma(`shape`, 1) variate.
pub fn sample_log_gamma<R: RngCore + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(invalid("shape", "gamma shape must be positive and finite"));
    }
    if shape < 1.0 {
        let boosted = marsaglia_tsang(shape + 1.0, rng);
        let u = uniform_open0(rng);
        return Ok(libm::log(boosted) + libm::log(u) / shape);
    }
    Ok(libm::log(marsaglia_tsang(shape, rng)))
}

/// Gamma(`shape`, 1) variate.
pub fn sample_gamma<R: RngCore + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if shape >= 1.0 && shape.is_finite() {
        return Ok(marsaglia_tsang(shape, rng));
    }
    sample_log_gamma(shape, rng).map(libm::exp)
}

fn marsaglia_tsang<R: RngCore + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape >= 1.0);
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = uniform(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u > 0.0 && libm::log(u) < 0.5 * x2 + d * (1.0 - v + libm::log(v)) {
            return d * v;
        }
    }
}
