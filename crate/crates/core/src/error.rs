use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: value {value} is outside the domain {domain}")]
    Domain {
        what: String,
        value: f64,
        domain: String,
    },

    #[error("grid index {index} out of range (grid has {len} points)")]
    Index { index: usize, len: usize },

    #[error("information matrix is singular (lambda_min = {lambda_min:e})")]
    Singular { lambda_min: f64 },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("starting design does not span the regressor space: rank {rank} < p = {p}")]
    StartDesign { rank: usize, p: usize },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("response {y} is not in the support of the {family} family")]
    ResponseDomain { family: &'static str, y: f64 },

    #[error("model specification is invalid: {0}")]
    Validation(ValidationReport),

    #[error("insufficient sample: {got} usable values, at least {need} required")]
    InsufficientSample { got: usize, need: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(what: impl Into<String>, value: f64, domain: impl ToString) -> Self {
        Error::Domain {
            what: what.into(),
            value,
            domain: domain.to_string(),
        }
    }
}
