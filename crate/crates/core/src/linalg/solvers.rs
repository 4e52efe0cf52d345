//! Fixed-point solvers for the discrete Lyapunov and Riccati equations and a
//! scaled-and-squared matrix exponential. Iterative forms are deliberate:
//! the matrices here are small and the iteration caps guard convergence.

use crate::error::{Error, Result};
use crate::linalg::eig::spectral_radius;
use crate::linalg::factor::Cholesky;
use crate::linalg::matrix::{Matrix, Scalar};

/// Margin below 1 a spectral radius estimate must clear before the doubling
/// iteration is attempted.
fn stability_margin<T: Scalar>() -> T {
    T::c(1e-8)
}

/// Solves `X = A X Aᵀ + Q` by doubling:
/// `X ← X + Aᵏ X Aᵏᵀ`, `A ← A²`, until the update norm drops below
/// `1e-12 ‖X‖_F`. Requires `ρ(A) < 1 - 1e-8` and symmetric `Q`.
pub fn solve_dlyap<T: Scalar>(a: &Matrix<T>, q: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() || a.rows() != q.rows() || !q.is_square() {
        return Err(Error::Dimension(format!(
            "dlyap needs square A and Q of equal order, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let rho = spectral_radius(a)?;
    if rho >= T::one() - stability_margin::<T>() {
        return Err(Error::Unstable(format!(
            "dlyap needs a Schur-stable A (spectral radius estimate {})",
            rho
        )));
    }
    let tol = T::c(1e-12).max(T::epsilon() * T::c(8.0));
    let mut x = q.symmetrize();
    let mut apow = a.clone();
    for _ in 0..64 {
        let delta = apow.dot(&x).dot(&apow.transpose());
        x = (&x + &delta).symmetrize();
        if delta.frobenius_norm() < tol * x.frobenius_norm().max(T::one() * T::min_positive_value()) {
            return Ok(x);
        }
        apow = apow.dot(&apow);
    }
    Err(Error::NonConvergence(
        "dlyap doubling iteration did not settle".into(),
    ))
}

const DARE_MAX_ITERS: usize = 1_000_000;

/// Solves the control-form discrete algebraic Riccati equation
/// `S = AᵀSA + W - AᵀSB (BᵀSB + V)⁻¹ BᵀSA`
/// by fixed-point iteration from `S = W`, stopping when successive iterates
/// differ by less than 1e-11 in Frobenius norm.
pub fn solve_dare<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    w: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n || w.rows() != n || !w.is_square() || v.rows() != b.cols() {
        return Err(Error::Dimension("dare operand shapes do not line up".into()));
    }
    let tol = T::c(1e-11).max(T::epsilon() * T::c(64.0));
    let mut s = w.symmetrize();
    for _ in 0..DARE_MAX_ITERS {
        let sb = s.dot(b); // n x l
        let gram = (&b.transpose().dot(&sb) + v).symmetrize(); // BᵀSB + V
        let gram_ch = Cholesky::factor(&gram)
            .map_err(|e| Error::Domain(format!("dare gain gram matrix must be SPD: {}", e)))?;
        let asb = a.transpose().dot(&sb); // AᵀSB
        let correction = asb.dot(&gram_ch.solve_mat(&asb.transpose()));
        let next = (&(&a.transpose().dot(&s).dot(a) + w) - &correction).symmetrize();
        let diff = (&next - &s).frobenius_norm();
        s = next;
        if diff < tol {
            return Ok(s);
        }
    }
    Err(Error::NonConvergence(format!(
        "dare iteration hit the {} iteration cap",
        DARE_MAX_ITERS
    )))
}

/// Solves the filter-form Riccati equation
/// `P = APAᵀ + Q - APCᵀ (CPCᵀ + R)⁻¹ CPAᵀ`
/// via duality with [`solve_dare`].
pub fn solve_filter_dare<T: Scalar>(
    a: &Matrix<T>,
    c: &Matrix<T>,
    q: &Matrix<T>,
    r: &Matrix<T>,
) -> Result<Matrix<T>> {
    solve_dare(&a.transpose(), &c.transpose(), q, r)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series;
/// terms are added until they fall below 1e-16 of the running norm.
pub fn expm<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    if !m.is_square() {
        return Err(Error::Dimension("expm needs a square matrix".into()));
    }
    if m.has_nan() {
        return Err(Error::InvalidInput("expm input contains NaN".into()));
    }
    let n = m.rows();
    let norm = m.frobenius_norm();
    // scale so ‖M/2^s‖ <= 0.5
    let mut s: i32 = 0;
    let mut scaled_norm = norm;
    while scaled_norm > T::c(0.5) {
        scaled_norm = scaled_norm * T::c(0.5);
        s += 1;
    }
    let b = m.scale(T::one() / T::c(f64::powi(2.0, s)));
    let mut sum = Matrix::<T>::identity(n);
    let mut term = Matrix::<T>::identity(n);
    let tol = T::c(1e-16).max(T::epsilon() / T::c(8.0));
    for k in 1..200 {
        term = term.dot(&b).scale(T::one() / T::c(k as f64));
        sum = &sum + &term;
        if term.frobenius_norm() < tol * sum.frobenius_norm() {
            break;
        }
    }
    let mut out = sum;
    for _ in 0..s {
        out = out.dot(&out);
    }
    Ok(out)
}
