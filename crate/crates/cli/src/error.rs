use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The document could not be parsed or resolved.
    #[error("config error: {0}")]
    Config(String),
    /// At least one recipe failed; the others ran to completion.
    #[error("{failed} of {total} job(s) failed")]
    JobsFailed { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] crois_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
