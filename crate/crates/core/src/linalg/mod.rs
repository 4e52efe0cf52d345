//! Self-contained dense linear algebra, generic over the scalar type.
//!
//! Everything downstream builds on this module: symmetric eigendecomposition
//! (cyclic Jacobi), Cholesky/LU factorizations, discrete Lyapunov and Riccati
//! solvers, and the matrix exponential used for zero-order-hold
//! discretization.

mod eig;
mod factor;
mod matrix;
mod solvers;

pub use eig::{gen_eig_max, is_psd, logdet, psd_factor, spectral_radius, sym_eig, SymEigDecomp};
pub use factor::{solve_spd_or_lu, Cholesky, Lu};
pub use matrix::{dot, norm2, quad_form, Matrix, Scalar};
pub use solvers::{expm, solve_dare, solve_dlyap, solve_filter_dare};
