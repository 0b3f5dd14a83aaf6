use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config file, flag or environment value; nothing was computed.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] ppssl_core::Error),
    /// An audit or acceptance criterion failed; outputs were written.
    #[error("check failed: {0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
