use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("game is not strongly monotone (mu = {mu:.3e}); pass allow_nonmonotone to override")]
    NotMonotone { mu: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("sample {index} failed: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("numerical breakdown: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures caused by bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension(_) | Error::Invalid(_) | Error::Unsupported(_) => true,
            Error::Sample { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
