use thiserror::Error;

use crate::phase_type::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument lies outside the domain of the operation (negative time, bad rate, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid generator: {}", format_violations(.0))]
    InvalidGenerator(Vec<Violation>),

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("belief degenerate: {0}")]
    DegenerateBelief(String),

    /// A value function handed to an operator left its admissible range.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
