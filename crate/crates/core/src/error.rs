use thiserror::Error;

use crate::splitting::HyperbolicityReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("variable x{index} at offset {offset} exceeds dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize, offset: usize },

    #[error("numeric domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("trajectory blow-up at t = {t}: |x| = {norm:e}")]
    BlowUp { t: f64, norm: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("periodic closure violated: |phi(T, x0) - x0| = {defect:e}")]
    ClosureViolation { defect: f64 },

    #[error("{what} did not converge (residual {residual:e})")]
    NonConvergence { what: String, residual: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("hyperbolicity check failed: {} violation(s)", .0.violations.len())]
    NotHyperbolic(Box<HyperbolicityReport>),

    #[error("trajectory leaves the region at t = {t}")]
    Escapes { t: f64 },

    #[error("target cell {to} is unreachable from cell {from}")]
    Unreachable { from: usize, to: usize },

    #[error("no admissible candidate for point(s) {points:?}")]
    Uncoverable { points: Vec<usize> },

    #[error("admissibility failure: {0}")]
    Admissibility(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::BlowUp { .. }
                | Error::NonFinite { .. }
                | Error::ClosureViolation { .. }
                | Error::NonConvergence { .. }
                | Error::DimensionMismatch(_)
                | Error::NotHyperbolic(_)
                | Error::Escapes { .. }
                | Error::Unreachable { .. }
                | Error::Uncoverable { .. }
                | Error::Admissibility(_)
                | Error::Linalg(_)
        )
    }
}
