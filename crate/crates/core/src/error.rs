use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error surfaced in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sampling,
    Augmentation,
    Packing,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Sampling => "sampling",
            Stage::Augmentation => "augmentation",
            Stage::Packing => "packing",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("invalid table document: {0}")]
    Document(String),

    #[error("budget error: {needed} tokens required but budget is {budget}")]
    Budget { needed: usize, budget: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("provider error from {endpoint}: {message}")]
    Provider {
        endpoint: String,
        status: Option<u16>,
        message: String,
    },

    #[error("no scripted reply for prompt digest {0}")]
    NoScriptedReply(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unknown table id {0:?}")]
    UnknownTable(String),

    #[error("table id {0:?} already registered with different content")]
    DuplicateTable(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps `self` with the pipeline stage it came from.
    pub fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Stage tag, if this error came out of the pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
