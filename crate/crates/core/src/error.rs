use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("softmax over an empty neighborhood")]
    EmptyNeighborhood,

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("{heads} heads do not divide embedding width {width}")]
    Heads { heads: usize, width: usize },

    #[error("assignment needs at least as many predictions ({preds}) as ground truths ({gts})")]
    TooFewPredictions { preds: usize, gts: usize },

    #[error("need {needed} proposals but only {available} are available")]
    TooFewProposals { needed: usize, available: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by bad user input rather than internal failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidBox(_)
                | Error::Config(_)
                | Error::Json(_)
                | Error::TooFewProposals { .. }
                | Error::TooFewPredictions { .. }
                | Error::EmptySequence
        )
    }
}
