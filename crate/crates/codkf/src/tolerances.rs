//! Numeric tolerances used across the crate.
//!
//! Definiteness of information matrices is exact mathematics; floating point
//! needs thresholds. Everything configurable at run time (certification,
//! feasibility slack, divergence ceiling) defaults to the values here.

/// Minimum eigenvalue below which a matrix that must be positive definite is
/// rejected as input.
pub const EPS_PD: f64 = 1e-12;

/// Tolerance for positive-semidefinite checks and for clamping small negative
/// eigenvalues when taking the square root of a singular covariance.
pub const EPS_PSD: f64 = 1e-10;

/// Default slack allowed on fusion feasibility identities
/// (weight simplex, semidefinite ordering, certificate constraints).
pub const EPS_FEAS: f64 = 1e-6;

/// Default relative eigenvalue threshold for the numerical rank of the
/// certificate matrix: eigenvalues above `TOL_RANK * lambda_max` count.
pub const TOL_RANK: f64 = 1e-6;

/// Default half-width of the certification window around `rho = 1`.
pub const TOL_RHO: f64 = 1e-3;

/// Slack on the certificate bound `rho <= 1`; anything above
/// `1 + RHO_BOUND_SLACK` is reported as a certificate anomaly.
pub const RHO_BOUND_SLACK: f64 = 1e-6;

/// Default network-MSE ceiling for divergence detection.
pub const DIVERGENCE_CEILING: f64 = 1e6;
