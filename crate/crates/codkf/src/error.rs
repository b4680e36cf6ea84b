//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum CodkfError {
    /// Operand shapes do not line up (vector length or matrix order).
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A matrix required to be (semi)definite is not, beyond tolerance.
    #[error("{context}: matrix is not {kind} (min eigenvalue {min_eig:.3e})")]
    NotDefinite {
        context: &'static str,
        /// "positive definite" or "positive semidefinite".
        kind: &'static str,
        min_eig: f64,
    },

    /// Conic solver did not reach the requested accuracy.
    #[error("fusion solver failure: {status}")]
    SolverFailure { status: String },

    /// Random graph generator exhausted its resampling budget.
    #[error("no connected graph after {attempts} draws (N={nodes}, edge density {density}); try a larger density")]
    GraphGeneration {
        nodes: usize,
        density: f64,
        attempts: usize,
    },

    /// A synchronous round was missing a neighbour's message.
    #[error("missing message from node {missing} in the inbox of node {node}")]
    MissingMessage { node: usize, missing: usize },

    /// A scalar argument is outside its admissible range.
    #[error("parameter {name} = {value} out of range: must be {requirement}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        requirement: &'static str,
    },
}

impl CodkfError {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        CodkfError::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
