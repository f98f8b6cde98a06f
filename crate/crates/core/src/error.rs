use thiserror::Error;

/// Errors produced by the numerical library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("mollification width {requested} is not a multiple of the grid step {step}; nearest admissible width is {nearest}")]
    MisalignedEpsilon {
        requested: f64,
        step: f64,
        nearest: f64,
    },

    #[error("kernel of order {alpha} in dimension {dim} is singular at the origin")]
    SingularAtOrigin { alpha: f64, dim: usize },

    #[error("divergent quantity: {0}")]
    Divergent(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("integration box too small: half-width {half_width} below required {suggested}")]
    BoxTooSmall { half_width: f64, suggested: f64 },

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("gradient does not match finite differences of f (relative error {rel_error})")]
    InconsistentGradient { rel_error: f64 },

    #[error("forward integral requires H >= 1/2 (got H = {hurst}): existence of the forward integral in dimension one holds iff H >= 1/2")]
    ForwardSchemeUnsupported { hurst: f64 },

    #[error("undecidable: {0}")]
    Undecidable(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
