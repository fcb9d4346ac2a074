use thiserror::Error;

pub type Result<T, E = DrnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DrnError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("value {value} outside the domain of {context}")]
    Domain { context: &'static str, value: f64 },

    #[error("training diverged: non-finite {what} at batch {batch}")]
    Divergence { what: &'static str, batch: usize },

    #[error("weighted normal equations are rank deficient ({0})")]
    RankDeficient(&'static str),

    #[error("baseline assigns zero probability to the whole refinement region")]
    DegenerateBaseline,

    #[error("test undefined: {0}")]
    UndefinedTest(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DrnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DrnError::Validation(msg.into())
    }
}
