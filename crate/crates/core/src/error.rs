use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("unknown {kind} set `{name}`")]
    UnknownSet { kind: &'static str, name: String },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("element {element} is degenerate: {reason}")]
    DegenerateElement { element: usize, reason: String },

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: String, message: String },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("element {element} is inverted (det F = {det:e})")]
    Inversion { element: usize, det: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("crank-nicolson step requires the previous internal forces")]
    MissingForceCache,

    #[error("QP infeasible: best-effort primal residual {residual:e}")]
    QpInfeasible { residual: f64 },

    #[error("QP iteration limit reached after {iterations} iterations")]
    QpIterationLimit { iterations: usize },

    #[error("line search found no acceptable step")]
    LineSearchFailure,

    #[error("time step underflow at t = {t} s (dt = {dt:e} s): {reason}")]
    StepFailure { t: f64, dt: f64, reason: String },

    #[error("trajectory line {line}: {message}")]
    MalformedTrajectory { line: usize, message: String },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

impl SimError {
    pub(crate) fn invalid(name: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::InvalidParameter {
            name: name.into(),
            message: message.into(),
        }
    }
}
