use thiserror::Error;

/// Errors produced by the evaluators and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested combination of inputs is not supported by this operation.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Protocol parameters violate an invariant (e.g. the reliability budget).
    #[error("invalid parameters: {0}")]
    Params(String),

    /// A scenario failed validation.
    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
