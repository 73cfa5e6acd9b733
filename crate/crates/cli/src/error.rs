use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration: unreadable file, invalid graph spec, bad flags.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cablegff::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
