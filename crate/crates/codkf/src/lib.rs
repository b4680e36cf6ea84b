//! Certifiable optimal distributed Kalman filtering over sensor networks.
//!
//! Each node of a communication graph runs a local information-form filter,
//! exchanges one-hop messages, fuses the neighbourhood predictions through an
//! outer Löwner-John trace maximisation, and certifies online, via a
//! semidefinite relaxation, whether that fusion attained the true optimum of
//! the rank-constrained intersection problem. The [`sim`] module wraps the
//! per-node machinery in a synchronous round engine and a Monte Carlo harness
//! that also runs a consensus DKF baseline and a centralized Kalman filter for
//! comparison.
//!
//! Modules:
//! - [`model`]: target dynamics, sensor models, seeded Gaussian sampling.
//! - [`topology`]: communication graphs and randomized network scenarios.
//! - [`fusion`]: the Löwner-John fusion solver, the trace-relaxation
//!   certificate solver, and brute-force verification oracles.
//! - [`filters`]: per-node estimator steps (certified fusion filter,
//!   consensus baseline, centralized reference).
//! - [`sim`]: round engine, metrics, divergence detection, Monte Carlo.

pub mod error;
pub mod filters;
pub mod fusion;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod tolerances;
pub mod topology;

pub use error::CodkfError;
