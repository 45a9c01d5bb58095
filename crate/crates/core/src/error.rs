use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("reward overflow at step {step}: R_t = {value}")]
    Overflow { step: u64, value: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible strategy: constraint {constraint} violated at step {step}")]
    Infeasible { constraint: &'static str, step: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("CFL condition violated: dt = {dt} exceeds the admissible {required_dt}")]
    Cfl { dt: f64, required_dt: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no sign change of the bracketing function on [{lo}, {hi}]")]
    NoCrossing { lo: f64, hi: f64 },

    #[error("density mass {escaped} escaped through the boundary at t = {t}")]
    BoundaryEscape { t: f64, escaped: f64 },

    #[error("investor supply exhausted at t = {t}: Z = {z} outside (0, N = {volume})")]
    SupplyExhaustion { t: f64, z: f64, volume: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn first(violations: Vec<Error>) -> Result<()> {
    match violations.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Collects every parameter violation instead of stopping at the first.
#[derive(Debug, Default)]
pub struct Violations(Vec<Error>);

impl Violations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, ok: bool, name: &'static str, reason: impl Into<String>) {
        if !ok {
            self.0.push(invalid(name, reason));
        }
    }

    pub fn positive(&mut self, name: &'static str, v: f64) {
        self.check(
            v > 0.0 && v.is_finite(),
            name,
            alloc::format!("must be positive and finite, got {v}"),
        );
    }

    pub fn push(&mut self, e: Error) {
        self.0.push(e);
    }

    pub fn extend(&mut self, more: Vec<Error>) {
        self.0.extend(more);
    }

    pub fn into_vec(self) -> Vec<Error> {
        self.0
    }

    /// The first violation, if any.
    pub fn into_result(self) -> Result<()> {
        first(self.0)
    }
}
