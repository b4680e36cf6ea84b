//! Solver for the trace-relaxation certificate problem:
//! maximize Tr(X) subject to Tr(X S_j) <= 1 for all j and X ⪰ 0.
//!
//! The dual (minimize Σ μ_j subject to Σ μ_j S_j ⪰ I, μ ≥ 0) has only p
//! scalar variables, so it is solved by a log-barrier Newton method and the
//! primal matrix is recovered from the central-path relation X = Z⁻¹/t with
//! Z = Σ μ_j S_j − I. One constraint admits a closed form, and constraints
//! implied by another in the semidefinite order are dropped up front, which
//! collapses nested families to that closed form.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{family_dim, numerical_rank, CertificateSolution, InfoEllipsoid};
use crate::error::CodkfError;
use crate::linalg::{min_eigenvalue, sym_eigen, symmetrize};
use crate::tolerances::TOL_RANK;

/// Multiplicative growth of the barrier parameter between centerings.
const BARRIER_GROWTH: f64 = 20.0;
/// Duality-gap target relative to the objective value.
const RELATIVE_GAP: f64 = 1e-9;
/// Newton decrement (squared) below which an iterate counts as centered.
const CENTER_TOL: f64 = 1e-12;
/// Acceptance band for replacing the interior solution with a rank-one one.
const POLISH_REL: f64 = 1e-6;
/// Dual weights this far below the largest count as inactive constraints.
const ACTIVE_SET_REL: f64 = 1e-4;
const MAX_OUTER: usize = 60;
const MAX_NEWTON: usize = 50;
const KKT_STEPS: usize = 5;

fn solver_err(status: &str) -> CodkfError {
    CodkfError::SolverFailure {
        status: status.to_string(),
    }
}

/// Maximizer of Tr(X) over the relaxed constraint set.
pub fn solve_trace_relaxation(
    ellipsoids: &[InfoEllipsoid],
) -> Result<CertificateSolution, CodkfError> {
    let n = family_dim(ellipsoids)?;
    let kept = active_constraints(ellipsoids);
    let mats: Vec<&DMatrix<f64>> = kept.iter().map(|&j| ellipsoids[j].s_mat()).collect();

    let (mut x_star, mut trace_x) = if mats.len() == 1 {
        single_constraint_optimum(mats[0])
    } else {
        let ipm = barrier_solve(&mats, n)?;
        match rank_one_polish(&ipm, &mats, n) {
            Some(polished) => polished,
            None => (ipm.x, ipm.trace),
        }
    };

    // Roundoff guard: pull the solution back inside the feasible set of the
    // full family, not just the kept constraints.
    let worst = ellipsoids
        .iter()
        .map(|e| x_star.dot(e.s_mat()))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst > 1.0 {
        x_star /= worst;
        trace_x /= worst;
    }

    let rank_x = numerical_rank(&x_star, TOL_RANK);
    Ok(CertificateSolution {
        x_star,
        trace_x,
        rank_x,
    })
}

/// Indices whose constraints are not implied by another listed constraint.
///
/// If S_j ⪯ S_k then Tr(X S_j) ≤ Tr(X S_k) for every X ⪰ 0 and constraint j
/// is redundant. On ties (equal matrices) the earliest index survives.
fn active_constraints(ellipsoids: &[InfoEllipsoid]) -> Vec<usize> {
    let p = ellipsoids.len();
    if p == 1 {
        return vec![0];
    }
    let mut le = vec![vec![false; p]; p];
    for j in 0..p {
        for k in 0..p {
            if j == k {
                continue;
            }
            let a = ellipsoids[j].s_mat();
            let b = ellipsoids[k].s_mat();
            let tol = 1e-12 * (a.norm() + b.norm());
            le[j][k] = min_eigenvalue(&(b - a)) >= -tol;
        }
    }
    let kept: Vec<usize> = (0..p)
        .filter(|&j| {
            !(0..p).any(|k| k != j && le[j][k] && (!le[k][j] || k < j))
        })
        .collect();
    if kept.is_empty() {
        // Tolerance cycles are pathological; fall back to the largest trace.
        let best = (0..p)
            .max_by(|&a, &b| {
                ellipsoids[a]
                    .s_mat()
                    .trace()
                    .total_cmp(&ellipsoids[b].s_mat().trace())
            })
            .unwrap();
        return vec![best];
    }
    kept
}

/// With one constraint the optimum concentrates on the smallest eigenvalue:
/// X = v vᵀ / λ_min(S) for the corresponding unit eigenvector v.
fn single_constraint_optimum(s: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (values, vectors) = sym_eigen(s);
    let lam_min = values[0];
    let v = vectors.column(0).into_owned();
    let x = symmetrize(&(&v * v.transpose() / lam_min));
    (x, 1.0 / lam_min)
}

struct BarrierOutcome {
    x: DMatrix<f64>,
    trace: f64,
    z: DMatrix<f64>,
    mu: DVector<f64>,
}

fn build_z(mats: &[&DMatrix<f64>], mu: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut z = DMatrix::identity(n, n) * -1.0;
    for (j, s) in mats.iter().enumerate() {
        z += *s * mu[j];
    }
    z
}

/// Newton-centers the dual barrier at fixed t. Steps are damped by 1/(1+λ)
/// outside the quadratic-convergence region, which keeps iterates interior
/// without evaluating the barrier value: once t is large the value's
/// meaningful decrements sink below f64 resolution, so any value-based line
/// search only compares rounding noise. Some(true) when the decrement target
/// is met, Some(false) when the iteration budget runs out or no trustworthy
/// step remains (the caller rolls back to its last centered iterate), None
/// when the entry iterate is not interior.
fn center_stage(mats: &[&DMatrix<f64>], mu: &mut DVector<f64>, t: f64, n: usize) -> Option<bool> {
    let p = mats.len();
    for _ in 0..MAX_NEWTON {
        let z = build_z(mats, mu, n);
        let chol = Cholesky::new(z)?;
        let z_inv = chol.inverse();
        let w: Vec<DMatrix<f64>> = mats.iter().map(|s| &z_inv * *s).collect();
        let grad = DVector::from_fn(p, |j, _| t - w[j].trace() - 1.0 / mu[j]);
        let mut hess = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in j..p {
                // Tr(Z⁻¹ S_j Z⁻¹ S_k)
                let v = w[j].transpose().dot(&w[k]);
                hess[(j, k)] = v;
                hess[(k, j)] = v;
            }
            hess[(j, j)] += 1.0 / (mu[j] * mu[j]);
        }
        let hchol = match Cholesky::new(hess) {
            Some(c) => c,
            None => return Some(false),
        };
        let step = hchol.solve(&(-&grad));
        let decrement = -grad.dot(&step);
        if decrement <= CENTER_TOL {
            return Some(true);
        }
        // A non-finite decrement means the Hessian solve overflowed; the
        // direction cannot be trusted.
        if !decrement.is_finite() {
            return Some(false);
        }
        let lambda = decrement.sqrt();
        let mut alpha = if lambda <= 0.25 { 1.0 } else { 1.0 / (1.0 + lambda) };
        // The damped step stays interior in exact arithmetic; halve only on
        // numerical escapes from the cone.
        let mut stepped = false;
        for _ in 0..40 {
            let cand = &*mu + &step * alpha;
            if cand.iter().all(|&m| m > 0.0)
                && Cholesky::new(build_z(mats, &cand, n)).is_some()
            {
                *mu = cand;
                stepped = true;
                break;
            }
            alpha *= 0.5;
        }
        if !stepped {
            return Some(false);
        }
    }
    Some(false)
}

fn barrier_solve(mats: &[&DMatrix<f64>], n: usize) -> Result<BarrierOutcome, CodkfError> {
    let p = mats.len();
    let mut sum = DMatrix::zeros(n, n);
    for s in mats {
        sum += *s;
    }
    let lam_min_sum = min_eigenvalue(&sum);
    if lam_min_sum <= 0.0 {
        return Err(solver_err("constraint sum is not positive definite"));
    }
    // μ = 2/λ_min(ΣS) uniformly puts Z = ΣμS − I strictly inside the cone.
    let mut mu = DVector::from_element(p, 2.0 / lam_min_sum);
    let mut t = (n + p) as f64 / (0.5 * mu.sum());

    // Only verified-centered iterates are kept: the (n + p)/t gap formula
    // holds on the central path and silently overstates accuracy off it, so
    // a stage that cannot finish centering is rolled back, not reported.
    let mut centered: Option<(DVector<f64>, f64)> = None;
    let mut growth = BARRIER_GROWTH;
    for _ in 0..MAX_OUTER {
        let mut trial = mu.clone();
        match center_stage(mats, &mut trial, t, n) {
            None => return Err(solver_err("dual iterate lost definiteness")),
            Some(true) => {
                mu = trial;
                centered = Some((mu.clone(), t));
                // On the central path the duality gap is (n + p)/t exactly.
                if (n + p) as f64 / t <= RELATIVE_GAP * mu.sum().max(1e-300) {
                    break;
                }
                t *= growth;
            }
            Some(false) => {
                // Centering hit its numerical floor. Retreat to the last
                // centered iterate and advance t more gently; once the
                // schedule is nearly flat, settle for what was verified.
                let Some((good_mu, good_t)) = centered.as_ref() else {
                    return Err(solver_err("initial centering failed"));
                };
                growth = growth.sqrt();
                if growth < 1.05 {
                    break;
                }
                mu = good_mu.clone();
                t = good_t * growth;
            }
        }
    }

    let (mu, t) = centered.ok_or_else(|| solver_err("initial centering failed"))?;
    let z = build_z(mats, &mu, n);
    let chol =
        Cholesky::new(z.clone()).ok_or_else(|| solver_err("final iterate not interior"))?;
    let x = symmetrize(&(chol.inverse() / t));
    let trace = x.trace();
    Ok(BarrierOutcome { x, trace, z, mu })
}

/// Newton refinement of a rank-one candidate on the active-set optimality
/// system: (Σ_J μ_j S_j − I) v = 0, the active quadratic forms vᵀS_j v agree,
/// and ‖v‖ = 1. The interior-point null direction carries a first-order error
/// of the size of the duality gap; a couple of exact Newton steps push it to
/// machine precision. Returns the refined direction, or None when the system
/// cannot be improved (then the caller keeps the unrefined direction).
fn refine_direction(
    v0: &DVector<f64>,
    mu0: &DVector<f64>,
    active: &[usize],
    mats: &[&DMatrix<f64>],
    n: usize,
) -> Option<DVector<f64>> {
    let m = active.len();
    let dim = n + m;
    let mut v = v0.clone();
    let mut mu: DVector<f64> = DVector::from_iterator(m, active.iter().map(|&j| mu0[j]));

    let residual = |v: &DVector<f64>, mu: &DVector<f64>| -> DVector<f64> {
        let mut z = DMatrix::identity(n, n) * -1.0;
        for (l, &j) in active.iter().enumerate() {
            z += mats[j] * mu[l];
        }
        let mut r = DVector::zeros(dim);
        r.rows_mut(0, n).copy_from(&(&z * v));
        let q0 = (mats[active[0]] * v).dot(v);
        for l in 1..m {
            r[n + l - 1] = (mats[active[l]] * v).dot(v) - q0;
        }
        r[dim - 1] = v.dot(v) - 1.0;
        r
    };

    let mut best_v = v.clone();
    let mut best_norm = residual(&v, &mu).norm();
    let start_norm = best_norm;
    for _ in 0..KKT_STEPS {
        let r = residual(&v, &mu);
        let mut jac = DMatrix::zeros(dim, dim);
        let mut z = DMatrix::identity(n, n) * -1.0;
        for (l, &j) in active.iter().enumerate() {
            z += mats[j] * mu[l];
        }
        jac.view_mut((0, 0), (n, n)).copy_from(&z);
        for (l, &j) in active.iter().enumerate() {
            jac.view_mut((0, n + l), (n, 1)).copy_from(&(mats[j] * &v));
        }
        for l in 1..m {
            let grad = (mats[active[l]] - mats[active[0]]) * &v * 2.0;
            jac.view_mut((n + l - 1, 0), (1, n))
                .copy_from(&grad.transpose());
        }
        jac.view_mut((dim - 1, 0), (1, n))
            .copy_from(&(v.transpose() * 2.0));
        let lu = jac.full_piv_lu();
        let delta = lu.solve(&(-&r))?;
        v += delta.rows(0, n);
        mu += delta.rows(n, m);
        let norm = residual(&v, &mu).norm();
        if norm < best_norm {
            best_norm = norm;
            best_v = v.clone();
        }
        if norm <= 1e-14 * (1.0 + start_norm) {
            break;
        }
    }
    if best_norm < start_norm {
        Some(best_v.normalize())
    } else {
        None
    }
}

/// Replaces the interior solution with β v vᵀ when a (refined) null
/// direction v of the final dual slack attains the optimum. The interior
/// iterate is full-rank by construction, so without this step a rank-one
/// optimum would never be reported as rank one.
///
/// β = 1/max_j vᵀS_jv keeps the candidate primal feasible for any direction,
/// hence β ≤ Tr(X*) unconditionally. Acceptance reconstructs multipliers μ̂
/// supported on the active set from (Σ μ̂_j S_j − I)v = 0 and checks that
/// they are dual feasible with value Σμ̂ matching β: weak duality then
/// squeezes β ≤ Tr(X*) ≤ Σμ̂, certifying β to the acceptance tolerance
/// independently of how far the interior iterate actually converged.
fn rank_one_polish(
    ipm: &BarrierOutcome,
    mats: &[&DMatrix<f64>],
    n: usize,
) -> Option<(DMatrix<f64>, f64)> {
    let (_, vectors) = sym_eigen(&ipm.z);
    let v0 = vectors.column(0).into_owned();
    let mu_max = ipm.mu.max();
    let active: Vec<usize> = (0..mats.len())
        .filter(|&j| ipm.mu[j] >= ACTIVE_SET_REL * mu_max)
        .collect();
    let v = refine_direction(&v0, &ipm.mu, &active, mats, n).unwrap_or(v0);
    let worst = mats
        .iter()
        .map(|s| (*s * &v).dot(&v))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst <= 0.0 {
        return None;
    }
    let beta = 1.0 / worst;

    // Least-squares multipliers over the active columns S_j v.
    let cols: Vec<DVector<f64>> = active.iter().map(|&j| mats[j] * &v).collect();
    let stacked = DMatrix::from_columns(&cols);
    let solved = stacked.svd(true, true).solve(&v, 1e-14).ok()?;
    let mut mu_hat = DVector::zeros(mats.len());
    let weight_scale = solved.amax().max(f64::MIN_POSITIVE);
    for (l, &j) in active.iter().enumerate() {
        let w = solved[(l, 0)];
        if w < -1e-8 * weight_scale {
            // A genuinely negative multiplier means v is not optimal.
            return None;
        }
        mu_hat[j] = w.max(0.0);
    }

    let z_hat = build_z(mats, &mu_hat, n);
    let scale = 1.0 + z_hat.norm();
    if (&z_hat * &v).norm() > 1e-7 * scale {
        return None;
    }
    if min_eigenvalue(&z_hat) < -1e-7 * scale {
        return None;
    }
    let dual_value = mu_hat.sum();
    if (dual_value - beta).abs() > POLISH_REL * beta {
        return None;
    }
    let x = symmetrize(&(&v * v.transpose() * beta));
    Some((x, beta))
}
