//! Cholesky and partial-pivot LU factorizations with the solve routines the
//! rest of the crate leans on: Cholesky for SPD systems, LU otherwise.

use crate::error::{Error, Result};
use crate::linalg::matrix::{Matrix, Scalar};

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors a symmetric positive definite matrix.
    pub fn factor(m: &Matrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension("cholesky needs a square matrix".into()));
        }
        let n = m.rows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(Error::Domain(format!(
                            "matrix not positive definite (pivot {} at row {})",
                            s, i
                        )));
                    }
                    l[(i, j)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Cholesky { l })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `M x = b`.
    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n, "cholesky solve length mismatch");
        // forward: L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[(i, k)];
                y[i] = y[i] - lik * y[k];
            }
            y[i] = y[i] / self.l[(i, i)];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = self.l[(k, i)];
                y[i] = y[i] - lki * y[k];
            }
            y[i] = y[i] / self.l[(i, i)];
        }
        y
    }

    /// Solves `M X = B` column-wise.
    pub fn solve_mat(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(b.rows(), self.dim(), "cholesky solve shape mismatch");
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col: Vec<T> = (0..b.rows()).map(|i| b[(i, j)]).collect();
            let x = self.solve_vec(&col);
            for i in 0..b.rows() {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    /// Explicit inverse `M⁻¹`.
    pub fn inverse(&self) -> Matrix<T> {
        self.solve_mat(&Matrix::identity(self.dim()))
    }

    /// Solves the lower-triangular system `L x = b`.
    pub fn solve_lower_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[(i, k)];
                y[i] = y[i] - lik * y[k];
            }
            y[i] = y[i] / self.l[(i, i)];
        }
        y
    }

    /// Solves the upper-triangular system `Lᵀ x = b`.
    pub fn solve_upper_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = self.l[(k, i)];
                y[i] = y[i] - lki * y[k];
            }
            y[i] = y[i] / self.l[(i, i)];
        }
        y
    }
}

/// Partial-pivot LU factorization.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    sign: T,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(m: &Matrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension("lu needs a square matrix".into()));
        }
        let n = m.rows();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        let scale = T::one().max(m.max_abs());
        for k in 0..n {
            let mut pivot_row = k;
            let mut pivot_val = lu[(k, k)].abs();
            for i in (k + 1)..n {
                if lu[(i, k)].abs() > pivot_val {
                    pivot_val = lu[(i, k)].abs();
                    pivot_row = i;
                }
            }
            if pivot_val <= T::epsilon() * scale {
                return Err(Error::Singular(format!("pivot {} at column {}", pivot_val, k)));
            }
            if pivot_row != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = t;
                }
                perm.swap(k, pivot_row);
                sign = -sign;
            }
            for i in (k + 1)..n {
                let f = lu[(i, k)] / lu[(k, k)];
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let delta = f * lu[(k, j)];
                    lu[(i, j)] = lu[(i, j)] - delta;
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n, "lu solve length mismatch");
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let lik = self.lu[(i, k)];
                y[i] = y[i] - lik * y[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let uik = self.lu[(i, k)];
                y[i] = y[i] - uik * y[k];
            }
            y[i] = y[i] / self.lu[(i, i)];
        }
        y
    }

    pub fn solve_mat(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(b.rows(), self.dim(), "lu solve shape mismatch");
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col: Vec<T> = (0..b.rows()).map(|i| b[(i, j)]).collect();
            let x = self.solve_vec(&col);
            for i in 0..b.rows() {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve_mat(&Matrix::identity(self.dim()))
    }

    pub fn det(&self) -> T {
        let mut d = self.sign;
        for i in 0..self.dim() {
            d = d * self.lu[(i, i)];
        }
        d
    }
}

/// Solves `M x = b` via Cholesky when `M` is SPD, falling back to LU.
pub fn solve_spd_or_lu<T: Scalar>(m: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    match Cholesky::factor(m) {
        Ok(ch) => Ok(ch.solve_mat(b)),
        Err(_) => Ok(Lu::factor(m)?.solve_mat(b)),
    }
}
