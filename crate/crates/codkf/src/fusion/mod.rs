//! Ellipsoid fusion and its optimality certificate.
//!
//! A node holds its own and its neighbours' predictions as information
//! ellipsoids (S, s) with S = P̄⁻¹ and s = S x̄. Under unknown correlations
//! the admissible fused information matrices are the Löwner-John style outer
//! bounds 0 ≺ S̄ ⪯ Σ λ_j S̄_j with λ on the unit simplex, and fusion picks
//! the one of largest trace. The companion trace-relaxation problem
//! (maximize Tr(X) subject to Tr(X S̄_j) ≤ 1, X ⪰ 0) upper-bounds the
//! non-convex rank-one version of that selection; when its solution is
//! rank one and tight (rho = 1) the fused estimate is certified optimal.

pub mod dump;
mod sdp;

pub use sdp::solve_trace_relaxation;

use nalgebra::{DMatrix, DVector};

use crate::error::CodkfError;
use crate::linalg::{min_eigenvalue, require_spd, spd_inverse, sym_eigen};
use crate::tolerances::RHO_BOUND_SLACK;

/// Information-form Gaussian belief: S = P̄⁻¹ positive definite, s = S x̄.
#[derive(Clone, Debug)]
pub struct InfoEllipsoid {
    s_mat: DMatrix<f64>,
    s_vec: DVector<f64>,
}

impl InfoEllipsoid {
    /// Symmetrizes `s_mat` and rejects it unless positive definite.
    pub fn new(s_mat: DMatrix<f64>, s_vec: DVector<f64>) -> Result<Self, CodkfError> {
        let s_mat = require_spd(&s_mat, "InfoEllipsoid information matrix")?;
        if s_vec.len() != s_mat.nrows() {
            return Err(CodkfError::dims(
                "InfoEllipsoid information vector",
                s_mat.nrows(),
                s_vec.len(),
            ));
        }
        Ok(InfoEllipsoid { s_mat, s_vec })
    }

    pub fn dim(&self) -> usize {
        self.s_mat.nrows()
    }

    pub fn s_mat(&self) -> &DMatrix<f64> {
        &self.s_mat
    }

    pub fn s_vec(&self) -> &DVector<f64> {
        &self.s_vec
    }

    /// Mean of the belief, `P̄ s = S⁻¹ s`.
    pub fn mean(&self) -> Result<DVector<f64>, CodkfError> {
        Ok(spd_inverse(&self.s_mat, "InfoEllipsoid mean")? * &self.s_vec)
    }
}

/// All ellipsoids must share one dimension; returns it.
fn family_dim(ellipsoids: &[InfoEllipsoid]) -> Result<usize, CodkfError> {
    let first = ellipsoids.first().ok_or(CodkfError::InvalidParameter {
        name: "ellipsoids",
        value: "0".into(),
        requirement: "a non-empty list",
    })?;
    let n = first.dim();
    for e in ellipsoids {
        if e.dim() != n {
            return Err(CodkfError::dims("ellipsoid family", n, e.dim()));
        }
    }
    Ok(n)
}

/// Output of the fusion step.
#[derive(Clone, Debug)]
pub struct FusionResult {
    /// Fused information matrix, positive definite.
    pub s_star: DMatrix<f64>,
    /// Its inverse, the fused prediction covariance.
    pub p_star: DMatrix<f64>,
    /// Simplex weights over the input list.
    pub lambda: DVector<f64>,
    /// Fused prediction, `P̄* Σ λ_j s_j`.
    pub x_star: DVector<f64>,
    /// `Tr(s_star)`.
    pub objective: f64,
}

/// Maximum-trace fusion over `0 ≺ S̄ ⪯ Σ λ_j S̄_j`, λ on the simplex.
///
/// The trace objective is monotone in the ordering, so the bound is tight at
/// S̄ = Σ λ_j S̄_j and the objective becomes linear in λ; a linear functional
/// on the simplex peaks at a vertex. The exact maximizer is therefore the
/// single input of largest trace (first index on ties).
pub fn solve_outer_lj(ellipsoids: &[InfoEllipsoid]) -> Result<FusionResult, CodkfError> {
    family_dim(ellipsoids)?;
    let mut best = 0usize;
    let mut best_trace = ellipsoids[0].s_mat.trace();
    for (j, e) in ellipsoids.iter().enumerate().skip(1) {
        let tr = e.s_mat.trace();
        if tr > best_trace {
            best = j;
            best_trace = tr;
        }
    }
    let winner = &ellipsoids[best];
    let s_star = winner.s_mat.clone();
    let p_star = spd_inverse(&s_star, "fused information matrix")?;
    let mut lambda = DVector::zeros(ellipsoids.len());
    lambda[best] = 1.0;
    let x_star = &p_star * &winner.s_vec;
    Ok(FusionResult {
        s_star,
        p_star,
        lambda,
        x_star,
        objective: best_trace,
    })
}

/// Solution of the trace-relaxation problem.
#[derive(Clone, Debug)]
pub struct CertificateSolution {
    /// Optimal relaxed matrix, positive semidefinite and feasible.
    pub x_star: DMatrix<f64>,
    /// `Tr(x_star)`.
    pub trace_x: f64,
    /// Numerical rank of `x_star` at the default tolerance.
    pub rank_x: usize,
}

/// Outcome of checking a certificate against a fusion result.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct CertificationRecord {
    /// Numerical rank of the relaxed solution.
    pub rank: usize,
    /// `Tr(X*) · λ_min(S̄*)`, clamped to [0, 1] for reporting.
    pub rho: f64,
    /// Rank one and rho within `tol_rho` of 1.
    pub certified: bool,
    /// True when the raw rho exceeded 1 beyond numerical slack.
    pub bound_anomaly: bool,
    /// True when fusion failed and the node kept its own prediction.
    pub solver_fallback: bool,
}

impl CertificationRecord {
    /// Record attached to a fallback update; nothing was certified.
    pub fn fallback() -> Self {
        CertificationRecord {
            rank: 0,
            rho: 0.0,
            certified: false,
            bound_anomaly: false,
            solver_fallback: true,
        }
    }
}

/// Count of eigenvalues above `tol` relative to the largest.
pub(crate) fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let (values, _) = sym_eigen(m);
    let lam_max = values[values.len() - 1];
    if lam_max <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > tol * lam_max).count()
}

/// Rank / tightness test of the relaxation against the fused result.
///
/// The optimal fused trace is bounded by 1/λ_min(S̄*), so for any feasible
/// relaxed solution rho ≤ 1 up to roundoff; a larger value is flagged, not
/// silently clamped.
pub fn certify(
    cert: &CertificateSolution,
    fusion: &FusionResult,
    tol_rank: f64,
    tol_rho: f64,
) -> CertificationRecord {
    let rank = numerical_rank(&cert.x_star, tol_rank);
    let rho_raw = cert.trace_x * min_eigenvalue(&fusion.s_star);
    let bound_anomaly = rho_raw > 1.0 + RHO_BOUND_SLACK;
    if bound_anomaly {
        log::warn!("certificate bound violated: rho = {rho_raw} > 1");
    }
    CertificationRecord {
        rank,
        rho: rho_raw.clamp(0.0, 1.0),
        certified: rank == 1 && (rho_raw - 1.0).abs() <= tol_rho,
        bound_anomaly,
        solver_fallback: false,
    }
}

/// Nonnegative integer vectors of length `parts` summing to `total`.
fn compositions(parts: usize, total: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(parts - 1, total - first) {
            let mut v = Vec::with_capacity(parts);
            v.push(first);
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

/// Brute-force grid search over the λ simplex for the fusion objective.
///
/// Forms Σ λ_j S̄_j at every grid point and takes its trace, sidestepping the
/// vertex argument used by [`solve_outer_lj`]. Intended as an independent
/// check; the grid is combinatorial, so the list is capped at 4 ellipsoids.
pub fn oracle_outer_lj(
    ellipsoids: &[InfoEllipsoid],
    grid_step: f64,
) -> Result<(f64, DVector<f64>), CodkfError> {
    let n = family_dim(ellipsoids)?;
    let p = ellipsoids.len();
    if p > 4 {
        return Err(CodkfError::InvalidParameter {
            name: "ellipsoids",
            value: p.to_string(),
            requirement: "at most 4 for the grid oracle",
        });
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(CodkfError::InvalidParameter {
            name: "grid_step",
            value: grid_step.to_string(),
            requirement: "in (0, 1]",
        });
    }
    let m = (1.0 / grid_step).round().max(1.0) as usize;
    let mut best_trace = f64::NEG_INFINITY;
    let mut best_lambda = DVector::zeros(p);
    for counts in compositions(p, m) {
        let lambda = DVector::from_iterator(p, counts.iter().map(|&c| c as f64 / m as f64));
        let mut combo = DMatrix::zeros(n, n);
        for (j, e) in ellipsoids.iter().enumerate() {
            combo += e.s_mat() * lambda[j];
        }
        let tr = combo.trace();
        if tr > best_trace {
            best_trace = tr;
            best_lambda = lambda;
        }
    }
    Ok((best_trace, best_lambda))
}
