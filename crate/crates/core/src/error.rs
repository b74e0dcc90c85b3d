use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("component {component} returned {got} outputs, expected {expected}")]
    PropagatorOutput {
        component: usize,
        expected: usize,
        got: usize,
    },

    #[error("component {component} failed: {message}")]
    Propagator { component: usize, message: String },

    #[error("relative residual undefined: residual at the zero state vanishes")]
    ZeroInitialResidual,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("Newton solve did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("mesh of {nodes} nodes per axis cannot be split into {parts} blocks")]
    IndivisibleMesh { nodes: usize, parts: usize },

    #[error("Lipschitz constant {0} is not a contraction")]
    NotContraction(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
