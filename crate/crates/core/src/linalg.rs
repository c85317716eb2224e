//! Small dense symmetric helpers shared by the estimation and eigensolver layers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry allowed before a matrix is rejected as non-symmetric.
const SYM_TOL: f64 = 1e-10;

pub fn is_symmetric(a: &DMatrix<f64>) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > SYM_TOL * scale {
                return false;
            }
        }
    }
    true
}

/// Smallest eigenvalue of a dense symmetric matrix.
pub fn sym_eig_min(a: &DMatrix<f64>) -> Result<f64> {
    if !is_symmetric(a) {
        return Err(Error::NotSymmetric);
    }
    if a.nrows() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let eig = SymmetricEigen::new(a.clone());
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// All eigenvalues, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    vals
}

/// Eigenvector of the eigenvalue with smallest absolute value, together with
/// that eigenvalue. Used as the "local null vector" primitive.
pub fn sym_min_abs_eigpair(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i].abs() < eig.eigenvalues[best].abs() {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).into())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
///
/// Failure of the factorization is the singularity signal; `rcond` in the
/// error is a cheap diagonal-based estimate.
pub fn spd_inverse(a: &DMatrix<f64>, clique: usize) -> Result<DMatrix<f64>> {
    if !is_symmetric(a) {
        return Err(Error::NotSymmetric);
    }
    match a.clone().cholesky() {
        Some(chol) => {
            let mut inv = chol.inverse();
            symmetrize(&mut inv);
            Ok(inv)
        }
        None => {
            let vals = sym_eigenvalues(a);
            let rcond = if vals.is_empty() || vals[vals.len() - 1].abs() == 0.0 {
                0.0
            } else {
                vals[0] / vals[vals.len() - 1].abs()
            };
            Err(Error::SingularLocalCovariance { clique, rcond })
        }
    }
}

/// Symmetrize in place: averages strictly off-diagonal pairs. Keeps results of
/// products like `P F^-1 P^T` exactly symmetric so message payloads stay
/// symmetric bit-for-bit.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Extract the `rows` x `cols` submatrix of `a`.
pub fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}
