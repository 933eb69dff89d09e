//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{QuiltError, Result};

/// `m[rows, cols]` as a new matrix.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Principal submatrix `m[idx, idx]`.
pub fn principal(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    submatrix(m, idx, idx)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| QuiltError::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// `log det m` for symmetric positive definite `m`.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| QuiltError::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry.
pub fn max_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigenvalues of a symmetric matrix in increasing order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigen-decomposition with eigenvalues sorted in decreasing order; columns of
/// the returned matrix are the matching eigenvectors.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);
    (values, vectors)
}

/// Maximum absolute row sum, the `ℓ∞ → ℓ∞` operator norm.
pub fn max_row_abs_sum(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_log_det() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = inverse_spd(&m).unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((log_det_spd(&m).unwrap() - 3.0_f64.ln()).abs() < 1e-14);
        assert!(inverse_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn eigen_order() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert_eq!(min_eigenvalue(&m), 1.0);
    }
}
