//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced by the numerical and analysis routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Input violates a construction invariant (NaN entries, bad lengths, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A linear solve hit a (numerically) singular matrix.
    #[error("singular matrix: {0}")]
    Singular(String),
    /// A solver that requires a stable system was handed an unstable one.
    #[error("unstable system: {0}")]
    Unstable(String),
    /// An iteration failed to converge within its cap.
    #[error("no convergence: {0}")]
    NonConvergence(String),
    /// No feasible point exists for the requested certificate or budget.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
