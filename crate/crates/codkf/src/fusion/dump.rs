//! JSON-friendly form of a single fusion instance and its analysis, the
//! interchange format of the command-line `certify` subcommand.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{certify, solve_outer_lj, solve_trace_relaxation, InfoEllipsoid};
use crate::error::CodkfError;

/// One information ellipsoid with the matrix in row-major nested lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipsoidData {
    pub s_mat: Vec<Vec<f64>>,
    pub s_vec: Vec<f64>,
}

fn rows_to_matrix(rows: &[Vec<f64>], context: &'static str) -> Result<DMatrix<f64>, CodkfError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CodkfError::dims(
            context,
            "square row-major matrix",
            format!("{} rows of lengths {:?}", n, rows.iter().map(Vec::len).collect::<Vec<_>>()),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl EllipsoidData {
    pub fn to_ellipsoid(&self) -> Result<InfoEllipsoid, CodkfError> {
        let s_mat = rows_to_matrix(&self.s_mat, "ellipsoid data matrix")?;
        let s_vec = DVector::from_vec(self.s_vec.clone());
        InfoEllipsoid::new(s_mat, s_vec)
    }

    pub fn from_ellipsoid(e: &InfoEllipsoid) -> Self {
        EllipsoidData {
            s_mat: matrix_to_rows(e.s_mat()),
            s_vec: e.s_vec().iter().copied().collect(),
        }
    }
}

/// A list of ellipsoids to fuse and certify, as read from disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusionInstance {
    pub ellipsoids: Vec<EllipsoidData>,
}

/// Everything the certify subcommand reports for one instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifyReport {
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub s_star: Vec<Vec<f64>>,
    pub x_star: Vec<Vec<f64>>,
    pub trace_x: f64,
    pub rank: usize,
    pub rho: f64,
    pub certified: bool,
    pub bound_anomaly: bool,
}

/// Fuses, solves the relaxation, and certifies one instance.
pub fn analyze_instance(
    instance: &FusionInstance,
    tol_rank: f64,
    tol_rho: f64,
) -> Result<CertifyReport, CodkfError> {
    let ellipsoids: Vec<InfoEllipsoid> = instance
        .ellipsoids
        .iter()
        .map(EllipsoidData::to_ellipsoid)
        .collect::<Result<_, _>>()?;
    let fusion = solve_outer_lj(&ellipsoids)?;
    let cert = solve_trace_relaxation(&ellipsoids)?;
    let record = certify(&cert, &fusion, tol_rank, tol_rho);
    Ok(CertifyReport {
        lambda: fusion.lambda.iter().copied().collect(),
        objective: fusion.objective,
        s_star: matrix_to_rows(&fusion.s_star),
        x_star: matrix_to_rows(&cert.x_star),
        trace_x: cert.trace_x,
        rank: record.rank,
        rho: record.rho,
        certified: record.certified,
        bound_anomaly: record.bound_anomaly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tolerances::{TOL_RANK, TOL_RHO};
    use approx::assert_abs_diff_eq;

    fn iso_data(scale: f64) -> EllipsoidData {
        EllipsoidData {
            s_mat: vec![vec![scale, 0.0], vec![0.0, scale]],
            s_vec: vec![0.0, 0.0],
        }
    }

    #[test]
    fn instance_round_trips_through_json() {
        let instance = FusionInstance {
            ellipsoids: vec![iso_data(2.0), iso_data(1.0)],
        };
        let text = serde_json::to_string(&instance).unwrap();
        let back: FusionInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(back.ellipsoids.len(), 2);
        assert_eq!(back.ellipsoids[0].s_mat[0][0], 2.0);
    }

    #[test]
    fn nested_pair_report() {
        let instance = FusionInstance {
            ellipsoids: vec![iso_data(2.0), iso_data(1.0)],
        };
        let report = analyze_instance(&instance, TOL_RANK, TOL_RHO).unwrap();
        assert_abs_diff_eq!(report.objective, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.trace_x, 0.5, epsilon = 1e-9);
        assert_eq!(report.rank, 1);
        assert!(report.certified);
        assert_eq!(report.lambda, vec![1.0, 0.0]);
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let bad = EllipsoidData {
            s_mat: vec![vec![1.0, 0.0], vec![0.0]],
            s_vec: vec![0.0, 0.0],
        };
        assert!(bad.to_ellipsoid().is_err());
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let bad = EllipsoidData {
            s_mat: vec![vec![1.0, 0.0], vec![0.0, -1.0]],
            s_vec: vec![0.0, 0.0],
        };
        let instance = FusionInstance {
            ellipsoids: vec![bad],
        };
        assert!(analyze_instance(&instance, TOL_RANK, TOL_RHO).is_err());
    }

    #[test]
    fn ellipsoid_data_round_trip() {
        let e = InfoEllipsoid::new(
            DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0]),
            DVector::from_vec(vec![1.0, -1.0]),
        )
        .unwrap();
        let data = EllipsoidData::from_ellipsoid(&e);
        let back = data.to_ellipsoid().unwrap();
        assert_eq!(back.s_mat(), e.s_mat());
        assert_eq!(back.s_vec(), e.s_vec());
    }
}
