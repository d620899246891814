use lawrob_core::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// Errors raised while building blocks from the config.
    pub fn config(e: Error) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Numeric(_) | CliError::Io(_) => exit::NUMERIC,
        }
    }
}

/// Errors raised during a run: bad settings stay config errors, everything
/// else (non-finite values, points escaping their domain) is numeric.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::ConfigInfeasible(_)
            | Error::MixtureNotSupported(_)
            | Error::InsufficientSamples { .. }
            | Error::NetBudgetExceeded { .. }
            | Error::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            Error::DomainViolation { .. } | Error::ParamOutOfDomain { .. } | Error::NonFiniteLoss { .. } => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}
