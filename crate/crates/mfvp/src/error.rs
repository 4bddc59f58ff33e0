//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An input coordinate, step or parameter was NaN or infinite.
    #[error("non-finite input in {context}")]
    NonFinite { context: &'static str },

    /// Two objects that must live on the same domain do not.
    #[error("domain mismatch in {context}")]
    DomainMismatch { context: &'static str },

    /// Inconsistent array or matrix dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A parameter violated its documented precondition.
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },

    /// A direct linear solve failed (matrix not positive definite or singular).
    #[error("linear solve failed in {context}")]
    SolveFailed { context: &'static str },

    /// The damped Newton iteration did not reach its tolerance.
    #[error("Newton iteration did not converge after {iterations} iterations (gradient norm {gradient_norm})")]
    NewtonDiverged {
        iterations: usize,
        gradient_norm: f64,
    },

    /// Interpolation constraint `Phi u / M = Y` has no solution within tolerance.
    #[error("infeasible interpolation constraint: residual norm {residual_norm} exceeds tolerance")]
    Infeasible { residual_norm: f64 },

    /// A density field had a zero or negative cell where positivity is required.
    #[error("non-positive density cell in {context}")]
    NonPositiveDensity { context: &'static str },

    /// Two grid-based fields do not share a grid.
    #[error("grid mismatch in {context}")]
    GridMismatch { context: &'static str },

    /// The adaptive integrator reduced the step below its floor.
    #[error("time step underflow at t = {t} (h = {h}, {rejected} rejected attempts)")]
    StepSizeUnderflow { t: f64, h: f64, rejected: usize },

    /// Total masses of two atom sets differ, so the energy MMD is undefined.
    #[error("weighted atom sets carry different total mass ({left} vs {right})")]
    MassMismatch { left: f64, right: f64 },

    /// The two independent MMD computations disagreed beyond tolerance.
    #[error("feature-kernel MMD identity violated: double sum {double_sum} vs operator norm {operator}")]
    MmdIdentityViolation { double_sum: f64, operator: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
