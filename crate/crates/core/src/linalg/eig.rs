//! Symmetric eigendecomposition by cyclic Jacobi rotations, plus the spectral
//! predicates built on it (PSD tests, log-determinants, radius estimates).
//!
//! Jacobi is chosen over QR-style methods on purpose: every matrix in this
//! crate is small (≤ ~24x24) and the rotations are unconditionally robust.

use crate::error::{Error, Result};
use crate::linalg::factor::Cholesky;
use crate::linalg::matrix::{Matrix, Scalar};

/// Eigendecomposition `M = V diag(λ) Vᵀ` of a symmetric matrix.
///
/// Eigenvalues are sorted ascending; eigenvector columns are orthonormal and
/// ordered to match.
#[derive(Debug, Clone)]
pub struct SymEigDecomp<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Matrix<T>,
}

impl<T: Scalar> SymEigDecomp<T> {
    /// Rebuilds `V diag(λ) Vᵀ` (used by the reconstruction tests).
    pub fn reconstruct(&self) -> Matrix<T> {
        let v = &self.eigenvectors;
        let lam = Matrix::diag(&self.eigenvalues);
        v.dot(&lam).dot(&v.transpose())
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> T {
        *self.eigenvalues.last().expect("empty decomposition")
    }
}

fn off_diag_norm<T: Scalar>(m: &Matrix<T>) -> T {
    let n = m.rows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Convergence threshold relative to ‖M‖_F. For f64 this is the pinned
/// 1e-12; for wider-epsilon scalars it floors at a few ulps.
fn jacobi_tol<T: Scalar>() -> T {
    T::c(1e-12).max(T::epsilon() * T::c(8.0))
}

const MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition of `m`.
///
/// `m` must be square with asymmetry below 1e-10 relative; it is symmetrized
/// as `(M+Mᵀ)/2` before the sweeps. Deterministic for a fixed input.
pub fn sym_eig<T: Scalar>(m: &Matrix<T>) -> Result<SymEigDecomp<T>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "sym_eig needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.has_nan() {
        return Err(Error::InvalidInput("sym_eig input contains NaN".into()));
    }
    if m.asymmetry() > T::c(1e-10).max(T::epsilon() * T::c(64.0)) {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (relative asymmetry {})",
            m.asymmetry()
        )));
    }
    let n = m.rows();
    let mut a = m.symmetrize();
    let mut v = Matrix::<T>::identity(n);
    if n <= 1 {
        return Ok(SymEigDecomp {
            eigenvalues: (0..n).map(|i| a[(i, i)]).collect(),
            eigenvectors: v,
        });
    }

    let norm = T::one().max(a.frobenius_norm());
    let tol = jacobi_tol::<T>() * norm;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diag_norm(&a) < tol {
            converged = true;
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= T::epsilon() * norm {
                    continue;
                }
                // rotation angle annihilating a[p][q]
                let tau = (a[(q, q)] - a[(p, p)]) / (T::c(2.0) * apq);
                let t = {
                    let s = if tau >= T::zero() { T::one() } else { -T::one() };
                    s / (tau.abs() + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diag_norm(&a) >= tol {
        return Err(Error::NonConvergence(
            "jacobi sweeps did not reduce the off-diagonal norm".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(i, i)]
            .partial_cmp(&a[(j, j)])
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<T> = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigDecomp {
        eigenvalues,
        eigenvectors,
    })
}

/// True iff `min λ(M) ≥ -tol * max(1, ‖M‖_F)` for symmetric `M`.
pub fn is_psd<T: Scalar>(m: &Matrix<T>, tol: T) -> Result<bool> {
    let eig = sym_eig(m)?;
    let scale = T::one().max(m.frobenius_norm());
    Ok(eig.min_eigenvalue() >= -tol * scale)
}

/// `log det M` for symmetric positive definite `M`, as the sum of
/// log-eigenvalues.
pub fn logdet<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    let eig = sym_eig(m)?;
    if eig.min_eigenvalue() <= T::zero() {
        return Err(Error::Domain(format!(
            "logdet needs a positive definite matrix (min eigenvalue {})",
            eig.min_eigenvalue()
        )));
    }
    Ok(eig.eigenvalues.iter().map(|v| v.ln()).sum())
}

/// Spectral radius estimate by normalized repeated squaring:
/// `ρ(A) = lim ‖A^{2^j}‖_F^{1/2^j}`, with the norm renormalized each step so
/// nothing over- or underflows. 52 squarings put the transient factor far
/// below 1e-10.
pub fn spectral_radius<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    if !m.is_square() {
        return Err(Error::Dimension("spectral radius needs a square matrix".into()));
    }
    if m.has_nan() {
        return Err(Error::InvalidInput("spectral radius input contains NaN".into()));
    }
    let mut cur = m.clone();
    let mut log_scale = T::zero(); // log of the accumulated normalization c_j
    let mut estimate = T::zero();
    for j in 0..52u32 {
        let f = cur.frobenius_norm();
        if f == T::zero() {
            return Ok(T::zero());
        }
        // ‖A^{2^j}‖ = f / c_j  =>  estimate = exp((ln f - ln c_j) / 2^j)
        estimate = ((f.ln() - log_scale) / T::c(f64::powi(2.0, j as i32))).exp();
        let normalized = cur.scale(T::one() / f);
        cur = normalized.dot(&normalized);
        log_scale = (log_scale - f.ln()) * T::c(2.0);
    }
    Ok(estimate)
}

/// Largest generalized eigenvalue `λ` of `M v = λ P v` for symmetric `M`
/// and SPD `P`, via the Cholesky reduction `λ_max(L⁻¹ M L⁻ᵀ)`.
pub fn gen_eig_max<T: Scalar>(m: &Matrix<T>, p: &Matrix<T>) -> Result<T> {
    let ch = Cholesky::factor(p)?;
    let n = p.rows();
    // B = L⁻¹ M L⁻ᵀ, formed column by column
    let mut inv_l_m = Matrix::zeros(n, n);
    for j in 0..n {
        let col: Vec<T> = (0..n).map(|i| m[(i, j)]).collect();
        let x = ch.solve_lower_vec(&col);
        for i in 0..n {
            inv_l_m[(i, j)] = x[i];
        }
    }
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        let row: Vec<T> = (0..n).map(|j| inv_l_m[(i, j)]).collect();
        let x = ch.solve_lower_vec(&row);
        for j in 0..n {
            b[(i, j)] = x[j];
        }
    }
    let eig = sym_eig(&b.symmetrize())?;
    Ok(eig.max_eigenvalue())
}

/// Factor `F` with `F Fᵀ = M` for symmetric positive semidefinite `M`,
/// built from the eigendecomposition so that mildly rank-deficient
/// covariances still factor.
pub fn psd_factor<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let eig = sym_eig(m)?;
    let scale = T::one().max(m.frobenius_norm());
    let floor = -T::c(1e-9) * scale;
    let mut roots = Vec::with_capacity(eig.eigenvalues.len());
    for &l in &eig.eigenvalues {
        if l < floor {
            return Err(Error::Domain(format!(
                "psd_factor needs a PSD matrix (eigenvalue {})",
                l
            )));
        }
        roots.push(l.max(T::zero()).sqrt());
    }
    Ok(eig.eigenvectors.dot(&Matrix::diag(&roots)))
}
