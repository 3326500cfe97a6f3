use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("MCMC did not converge (max R-hat {max_rhat:.4}); results were written to {out}")]
    NotConverged { max_rhat: f64, out: String },

    #[error(transparent)]
    Core(#[from] mse_core::Error),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error("{0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io { context: context.into(), source }
    }

    /// 0 success, 1 usage or validation, 2 strict-mode convergence failure, 3 numeric or internal.
    pub fn exit_code(&self) -> ExitCode {
        use mse_core::Error as E;
        let code = match self {
            CliError::Usage(_) => 1,
            CliError::NotConverged { .. } => 2,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
            CliError::Io { .. } | CliError::Internal(_) => 3,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::DimensionMismatch(_) | E::Incompatible(_) | E::Format(_) | E::Json(_) => 1,
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 1,
                _ => 3,
            },
        };
        ExitCode::from(code)
    }
}
