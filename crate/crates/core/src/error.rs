use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The exponent `p` (or dimension) lies outside the regime an operation requires.
    #[error("regime error: {0}")]
    Regime(String),

    /// A theorem hypothesis needed to evaluate a closed form does not hold.
    #[error("hypothesis error: {0}")]
    Hypothesis(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {message} (achieved tolerance {achieved:e})")]
    Numerical { message: String, achieved: f64 },

    #[error("shape mismatch: expected {expected} samples, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
