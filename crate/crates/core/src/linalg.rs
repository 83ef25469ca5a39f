//! Small dense linear-algebra helpers shared by the mixture and filter code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{HbfError, Result};

/// Base jitter added to the diagonal when a plain Cholesky factorization fails.
pub const JITTER: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a symmetric matrix.
///
/// The plain factorization is tried first. If it fails, `JITTER * max(1, max diag)`
/// is added to the diagonal before a second attempt.
pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch);
    }
    let scale = m.diagonal().iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * (JITTER * scale);
    Cholesky::new(jittered).ok_or_else(|| {
        HbfError::numerical(context, "covariance is not positive semi-definite")
    })
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m, context)?.inverse()))
}

/// `ln |P|` from a Cholesky factor.
pub fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `vᵀ P⁻¹ v` from a Cholesky factor of `P`.
pub fn mahalanobis_sq(ch: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> f64 {
    let mut w = v.clone();
    // Only the lower triangle of `l_dirty` is read by the triangular solve.
    ch.l_dirty().solve_lower_triangular_mut(&mut w);
    w.norm_squared()
}

pub fn check_dim(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(HbfError::DimensionMismatch {
            context: context.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

/// Build a matrix from row-major nested vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(HbfError::config(field, "matrix has no rows"));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(HbfError::config(field, "matrix rows must be non-empty and of equal length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HbfError::config(field, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
