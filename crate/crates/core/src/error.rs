use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. The CLI maps these onto exit codes: input and
/// validation problems are user errors, `Numeric` means the computation
/// itself broke down, `Infeasible` is reserved for optimization outcomes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
