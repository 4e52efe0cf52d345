//! Analysis toolkit for LQG control loops facing stealthy integrity attacks.
//!
//! The crate answers one question end to end: how many time steps can a
//! closed control loop spend under a detector-bypassing attack and still stay
//! inside its safety constraints with a chosen probability? The pieces:
//!
//! * [`linalg`] — dense matrix kernels (Jacobi eigensolver, Cholesky/LU,
//!   discrete Lyapunov/Riccati solvers), generic over the scalar type.
//! * [`plant`] — the plant/estimator/controller loop, its augmented
//!   closed-loop dynamics, and the built-in quadruple-tank benchmark.
//! * [`stealth`] — the windowed chi-squared residue detector, the
//!   noncentral tail inversion (generalized Marcum Q), and the residue-bias
//!   budget a stealthy attacker is limited to.
//! * [`lmi`] — Lyapunov-rate and invariance certificates checked as matrix
//!   inequalities by eigenvalue.
//! * [`safety`] — ellipsoidal reach sets, their Minkowski-sum support
//!   against half-space safety constraints, and the safe-attack-time bound.
//! * [`sim`] — a deterministic closed-loop Monte-Carlo simulator with
//!   configurable attack strategies that validates the analytical bounds.
//!
//! Concrete `f64` aliases for the generic core live at the crate root
//! ([`Mat`], [`SymEig`]); the domain modules work in `f64` throughout.

pub mod error;
pub mod linalg;
pub mod lmi;
pub mod plant;
pub mod rng;
pub mod safety;
pub mod sim;
pub mod stealth;

pub use error::{Error, Result};

/// Dense `f64` matrix used by all domain modules.
pub type Mat = linalg::Matrix<f64>;

/// Single precision variant of the matrix type.
pub type Mat32 = linalg::Matrix<f32>;

/// `f64` symmetric eigendecomposition.
pub type SymEig = linalg::SymEigDecomp<f64>;
