//! Seeded random sources.
//!
//! Every trajectory owns a ChaCha8 generator seeded with
//! `seed ^ trajectory_index`, so batches give the same result however they
//! are scheduled. Independent purposes inside one trajectory (block
//! selection, price noise, strategy draws) use distinct ChaCha streams of
//! that generator.

use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub use rand_chacha::ChaCha8Rng as SimRng;

/// Stream ids used inside a single trajectory.
pub mod stream {
    pub const SELECTION: u64 = 0;
    pub const PRICE: u64 = 1;
    pub const LIMIT_SAMPLES: u64 = 2;
    /// Random strategy `j` draws from stream `STRATEGY_BASE + j`.
    pub const STRATEGY_BASE: u64 = 1 << 32;
}

/// Generator for trajectory `index` of a batch seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index)
}

/// Like [`substream`] but positioned on ChaCha stream `stream`.
pub fn substream_on(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = substream(seed, index);
    rng.set_stream(stream);
    rng
}

/// Uniform variate on `[0, 1)` built from the top 53 bits of one `u64`.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform variate on `(0, 1]`.
#[inline]
pub fn uniform_open0<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    1.0 - uniform(rng)
}

/// Standard normal variate (Box–Muller, one of the pair is discarded).
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = uniform_open0(rng);
    let u2 = uniform(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}
