use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The image has no nonzero pixel, so no normalized amplitude state exists.
    #[error("zero-norm image cannot be encoded as a normalized state")]
    ZeroNorm,

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A Gram matrix failed the positive-semidefinite check.
    #[error("spectral error: {0}")]
    Spectral(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
