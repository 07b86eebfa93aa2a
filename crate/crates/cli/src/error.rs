use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("numerical failure at {failed} sweep point(s)")]
    Numerical { failed: usize },

    #[error("{failed} validation check(s) failed")]
    Validation { failed: usize },
}

impl CliError {
    /// 0 success, 1 I/O, 2 config or usage, 3 numerical failure, 4 failed validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Csv(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Validation { .. } => 4,
        }
    }
}
