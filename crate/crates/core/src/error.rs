use thiserror::Error;

/// Errors raised by the factorizations, the filters and the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (pivot {index} = {value:.6e})")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("degenerate factorization: diagonal factor entry {0} is zero")]
    DegenerateFactorization(usize),

    #[error("rank-deficient pre-array: pivot {index} = {value:.6e}")]
    RankDeficientPreArray { index: usize, value: f64 },

    #[error("invalid weight {index} = {value:.6e} in pre-array")]
    InvalidWeight { index: usize, value: f64 },

    #[error("derivative undefined at rank deficiency (D_beta entry {0} is zero)")]
    DerivativeUndefined(usize),

    #[error("invalid innovation covariance: entry {index} = {value:.6e}")]
    InvalidInnovationCovariance { index: usize, value: f64 },

    #[error("ill-conditioned innovation covariance")]
    IllConditionedInnovation,

    #[error("degenerate weight: theta must be nonzero")]
    DegenerateWeight,

    #[error("parameter {index} out of domain: {value}")]
    ParameterOutOfDomain { index: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("filter failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step { step, source: Box::new(e) },
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
