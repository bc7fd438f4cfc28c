use thiserror::Error;

/// Errors produced by the private GP pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: &'static str,
    },

    #[error("{context}: matrix is not positive definite even after jitter {jitter:e}")]
    Factorization { context: &'static str, jitter: f64 },

    #[error("cloaking matrix has no nonzero column")]
    ZeroCloakingMatrix,

    #[error("noise covariance optimisation did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },

    #[error("fold {fold} leaves {train} training and {test} test points")]
    EmptyFold { fold: usize, train: usize, test: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("predictive variance {value:e} at test point {index} is negative beyond tolerance")]
    NegativeVariance { index: usize, value: f64 },

    #[error("every configuration was excluded by the sensitivity threshold")]
    AllConfigsExcluded,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad IDX file: {0}")]
    Idx(String),

    #[error("requested {requested} records but only {available} are available")]
    InsufficientRecords { requested: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, value: impl ToString, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value: value.to_string(),
        reason,
    }
}
