use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("divergence at index {0}")]
    Divergence(usize),
    #[error("no finite bound: {0}")]
    NoFiniteBound(String),
    #[error("degenerate geometric series (a*c = 1)")]
    Degenerate,
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
