use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("inverse map undefined: point {0:?} lies on the excluded ray xi' = 0, xi_n <= 0")]
    ExcludedRay(Vec<f64>),

    #[error("operator undefined at the origin")]
    UndefinedAtOrigin,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
