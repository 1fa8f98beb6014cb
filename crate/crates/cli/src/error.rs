use salsa_core::SalsaError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, arguments or missing inputs.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn missing(what: &str, path: &std::path::Path) -> Self {
        CliError::Validation(format!("missing {what}: {}", path.display()))
    }
}

impl From<SalsaError> for CliError {
    fn from(e: SalsaError) -> Self {
        match e {
            SalsaError::InvalidArgument(_) | SalsaError::Format { .. } | SalsaError::Parse { .. } => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("json: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
