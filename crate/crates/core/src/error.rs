use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed alignment: {0}")]
    Structure(String),

    #[error("illegal character {ch:?} in record '{record}' at position {position}")]
    Character {
        record: String,
        position: usize,
        ch: char,
    },

    #[error("empty family: {0}")]
    EmptyFamily(String),

    #[error("degenerate family: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("entropy curve is flat over the grid (delta H = {delta:e}); no transition")]
    NoTransition { delta: f64 },

    #[error("chain {chain} aborted at iteration {iteration}: {reason}")]
    ChainAborted {
        chain: usize,
        iteration: usize,
        reason: String,
    },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("bad artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    ///
    /// 3 for data problems, 4 for numeric failures, 2 for usage/configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) | Error::NoTransition { .. } | Error::ChainAborted { .. } => 4,
            _ => 3,
        }
    }
}
