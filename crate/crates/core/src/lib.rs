//! Numerical core for Proof-of-Stake wealth dynamics.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only computation:
//!
//! - [`urn`]: the time-dependent Pólya urn behind PoS block selection, plus
//!   samplers for its Dirichlet and Gamma limit laws.
//! - [`metrics`]: sample summaries, Kolmogorov–Smirnov distance, histograms
//!   and stability sweeps over initial holdings.
//! - [`trading`]: the discrete consumption–investment model with trading,
//!   the discounted wealth process and the participation regime classifier.
//! - [`hjb`]: the continuous-time volume-capped control problem, its
//!   bang-bang closed form and an upwind viscosity solver.
//! - [`mfg`]: the mean-field equilibrium with linear price impact and
//!   quadratic trading cost.
//!
//! Randomness is always passed in explicitly; see [`rng`] for the
//! substream convention used by batch drivers.
#![no_std]
// NaN must fail the `!(x > 0)` style guards, and time-indexed loops read like the recursions
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod gamma;
pub mod hjb;
pub mod metrics;
pub mod mfg;
pub mod quad;
pub mod rng;
pub mod trading;
pub mod urn;

pub use error::{Error, Result};
