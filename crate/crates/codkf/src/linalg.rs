//! Small dense symmetric-matrix helpers shared by the model and fusion code.

use nalgebra::{DMatrix, DVector};

use crate::error::CodkfError;
use crate::tolerances::{EPS_PD, EPS_PSD};

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending, with matching eigenvectors
/// as columns.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Symmetrizes and checks positive definiteness (min eigenvalue > [`EPS_PD`]).
pub fn require_spd(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>, CodkfError> {
    if m.nrows() != m.ncols() {
        return Err(CodkfError::dims(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let sym = symmetrize(m);
    let min_eig = min_eigenvalue(&sym);
    if min_eig <= EPS_PD {
        return Err(CodkfError::NotDefinite {
            context,
            kind: "positive definite",
            min_eig,
        });
    }
    Ok(sym)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>, CodkfError> {
    nalgebra::Cholesky::new(m.clone())
        .map(|ch| ch.inverse())
        .ok_or(CodkfError::NotDefinite {
            context,
            kind: "positive definite",
            min_eig: min_eigenvalue(m),
        })
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Cholesky handles the strictly definite case; singular covariances (a zero
/// or low-rank process noise) fall back to the eigendecomposition root with
/// eigenvalues in `[-EPS_PSD, 0)` clamped to zero. Eigenvalues below
/// `-EPS_PSD` are rejected.
pub fn psd_sqrt(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>, CodkfError> {
    let sym = symmetrize(m);
    if let Some(ch) = nalgebra::Cholesky::new(sym.clone()) {
        return Ok(ch.l());
    }
    let (values, vectors) = sym_eigen(&sym);
    let scale = values.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1.0);
    let mut clamped = values;
    for v in clamped.iter_mut() {
        if *v < -EPS_PSD * scale {
            return Err(CodkfError::NotDefinite {
                context,
                kind: "positive semidefinite",
                min_eig: *v,
            });
        }
        *v = v.max(0.0);
    }
    let sqrt_diag = DMatrix::from_diagonal(&clamped.map(f64::sqrt));
    Ok(&vectors * sqrt_diag)
}
