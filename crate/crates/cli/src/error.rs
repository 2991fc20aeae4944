use thiserror::Error;

/// Runner failures, partitioned by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unknown keys, unparseable or out-of-range settings.
    #[error("usage error: {0}")]
    Usage(String),
    /// The computation itself failed (non-finite state, trace collapse, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// An emitted table would violate the analytic bound ordering.
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Numeric(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<dfl_core::Error> for CliError {
    fn from(e: dfl_core::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}
