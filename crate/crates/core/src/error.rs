use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the operation (nonpositive
    /// dilation factor, negative Sobolev order, `p < 1`, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or malformed configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Two fields (or a field and an operator) live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The mollifier at this epsilon cannot be represented on the grid.
    #[error("resolution error at epsilon = {epsilon}: {reason}")]
    Resolution { epsilon: f64, reason: String },

    /// A structural invariant was violated (e.g. a negative mass).
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// NaN/Inf or a similar breakdown during time stepping.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The Picard-Duhamel reference iteration did not converge.
    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::GridMismatch(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
