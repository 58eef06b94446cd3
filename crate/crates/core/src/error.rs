//! The error type shared by every module of the toolkit.
//!
//! All fallible library calls return [`KacError`]; binaries are expected to
//! map it onto exit codes and whatever machine-readable record they emit.
//! Variants carry the offending numbers so that a failed precondition can be
//! reported without re-deriving context at the call site.

use thiserror::Error;

/// Shorthand used throughout the crate.
pub type Result<T> = std::result::Result<T, KacError>;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum KacError {
    /// A velocity-space dimension of zero was requested.
    #[error("velocity dimension must be at least 1")]
    ZeroDimension,

    /// A vector had the wrong number of components for the context.
    #[error("expected {expected} components, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A particle index fell outside the state.
    #[error("particle index {index} out of range for {count} particles")]
    ParticleOutOfRange { index: usize, count: usize },

    /// A collision pair must name two distinct particles in increasing order.
    #[error("invalid collision pair ({i}, {j}): indices must satisfy i < j")]
    BadPair { i: usize, j: usize },

    /// A scattering direction failed the unit-norm contract.
    #[error("scattering direction is not a unit vector (|sigma| = {norm})")]
    NotAUnitVector { norm: f64 },

    /// A direction of zero length cannot be normalized.
    #[error("cannot normalize a zero-length direction")]
    ZeroDirection,

    /// Refusal to materialize a dense matrix beyond the configured cap.
    #[error("dense matrix of side {side} exceeds the cap of {cap}")]
    DenseSideExceedsCap { side: usize, cap: usize },

    /// A model or run parameter failed validation. The field name is spelled
    /// out so configuration errors point at the offending entry.
    #[error("parameter `{name}` is invalid: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A covariance matrix was not (numerically) positive definite.
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    /// Conditioning screens removed every component of a mixture.
    #[error("all {total} mixture components were rejected as ill-conditioned")]
    AllComponentsRejected { total: usize },

    /// The Poisson truncation could not push the tail mass below tolerance.
    #[error(
        "Poisson tail mass {mass:e} at cutoff {k_max} exceeds tolerance {tol:e} (rate {rate})"
    )]
    PoissonTailTooHeavy {
        rate: f64,
        k_max: usize,
        mass: f64,
        tol: f64,
    },

    /// Doubling the quadrature order moved the answer by more than the
    /// caller's tolerance, i.e. the integral is not resolved.
    #[error(
        "quadrature unresolved: orders {coarse_order} and {fine_order} disagree by {disagreement:e} (tolerance {tol:e})"
    )]
    QuadratureUnresolved {
        coarse_order: usize,
        fine_order: usize,
        disagreement: f64,
        tol: f64,
    },

    /// An information curve handed to the entropy reconstruction grew instead
    /// of decaying, so the exponential tail model does not apply.
    #[error("information curve does not decay: I({s_early}) = {i_early} vs I({s_late}) = {i_late}")]
    NonDecayingInformation {
        s_early: f64,
        i_early: f64,
        s_late: f64,
        i_late: f64,
    },

    /// A Monte Carlo estimate disagreed with its closed form by more than the
    /// stated multiple of the standard error. This is a hard failure: it
    /// means either the closed form or the sampler is wrong.
    #[error(
        "Monte Carlo cross-check failed for {what}: estimate {observed} vs expected {expected} (|diff| = {deviation:e} > {allowed:e})"
    )]
    CrossCheckFailed {
        what: &'static str,
        observed: f64,
        expected: f64,
        deviation: f64,
        allowed: f64,
    },

    /// An input collection that must be non-empty was empty.
    #[error("{what} must not be empty")]
    Empty { what: &'static str },
}
