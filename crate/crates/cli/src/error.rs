use drn_core::DrnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// A required artifact is missing or stale.
    #[error("dependency error: {message}; run `drn {command}` first")]
    Dependency { message: String, command: &'static str },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Dependency { .. } => 3,
            Self::Numerical(_) => 4,
            Self::Other(_) => 1,
        }
    }

    pub fn missing(message: impl Into<String>, command: &'static str) -> Self {
        Self::Dependency {
            message: message.into(),
            command,
        }
    }
}

impl From<DrnError> for CliError {
    fn from(e: DrnError) -> Self {
        match e {
            DrnError::Validation(_) | DrnError::Dimension { .. } => Self::Config(e.to_string()),
            DrnError::Domain { .. }
            | DrnError::Divergence { .. }
            | DrnError::RankDeficient(_)
            | DrnError::DegenerateBaseline
            | DrnError::UndefinedTest(_) => Self::Numerical(e.to_string()),
            DrnError::Io(_) | DrnError::Json(_) | DrnError::Csv(_) => Self::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Other(e.to_string())
    }
}
