//! Small dense helpers shared by the estimator, the oracle, and the checks.

use nalgebra::{Cholesky, DMatrix, SMatrix};

use crate::error::{Error, Result};

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    dynamic(&symmetrize(m)).symmetric_eigenvalues().min()
}

/// Smallest singular value computed by SVD.
pub fn sigma_min<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    dynamic(m).singular_values().min()
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse<const N: usize>(
    m: &SMatrix<f64, N, N>,
    context: &'static str,
) -> Result<SMatrix<f64, N, N>> {
    match Cholesky::new(symmetrize(m)) {
        Some(chol) => Ok(symmetrize(&chol.inverse())),
        None => Err(Error::NumericalDegeneracy {
            context,
            min_eigenvalue: min_eigenvalue(m),
        }),
    }
}

pub fn is_spd<const N: usize>(m: &SMatrix<f64, N, N>) -> bool {
    Cholesky::new(*m).is_some()
}

// The decompositions need dimension bounds that const-generic sizes cannot
// express, so they run on a dynamic copy.
fn dynamic<const N: usize>(m: &SMatrix<f64, N, N>) -> DMatrix<f64> {
    DMatrix::from_column_slice(N, N, m.as_slice())
}
