use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical abort at t={t}: {reason}")]
    NumericalAbort { t: f64, reason: String },
    #[error("size guard: {points} points exceeds limit {limit}")]
    SizeGuard { points: usize, limit: usize },
    #[error("degenerate field: {0}")]
    Degenerate(String),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalAbort { .. } => 3,
            Error::SizeGuard { .. } => 4,
            Error::Io(_) | Error::Format(_) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::Config(_) => "config",
            Error::NumericalAbort { .. } => "numerical_abort",
            Error::SizeGuard { .. } => "size_guard",
            Error::Degenerate(_) => "degenerate",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
