use thiserror::Error;

/// Errors raised by every module of the library.
///
/// The CLI maps [`Error::is_validation`] to exit code 2 and all other
/// variants to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("failed to converge: {0}")]
    Convergence(String),
    #[error("integrability: {0}")]
    Integrability(String),
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("path blew up: {0}")]
    BlowUp(String),
    #[error("problem too large: {0}")]
    Size(String),
    #[error("sinkhorn did not converge after {iterations} iterations (marginal violation {violation:.3e})")]
    NonConvergence { iterations: usize, violation: f64 },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("insufficient paths: {got} < {need}")]
    InsufficientPaths { got: usize, need: usize },
    #[error("not dissipative: {0}")]
    NotDissipative(String),
    #[error("insufficient tail: {0}")]
    InsufficientTail(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("subordinator overran the simulated horizon: {0}")]
    Horizon(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_) | Error::Size(_) | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
