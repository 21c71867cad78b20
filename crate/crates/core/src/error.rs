use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("checkpoints are not structurally congruent: {0}")]
    Congruence(String),

    #[error("malformed checkpoint file: {0}")]
    Format(String),

    #[error("non-finite value in tensor `{tensor}` at element {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("expected element type {expected:?}, found {found:?}")]
    DTypeMismatch {
        expected: crate::DType,
        found: crate::DType,
    },

    #[error("invalid merge weights: {0}")]
    Weight(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("need at least {needed} checkpoints, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("tuning history is empty")]
    EmptyHistory,

    #[error("every candidate evaluation returned a non-finite score")]
    AllCandidatesFailed,

    #[error("forward-transfer matrix has no entries")]
    EmptyMatrix,

    #[error("no entries for training timestamp {0}")]
    MissingRow(i64),

    #[error("invalid forward-transfer entry: {0}")]
    InvalidEntry(String),

    #[error("all checkpoints are identical; nothing to project")]
    DegenerateTrajectory,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("training diverged at iteration {iter}")]
    Divergence { iter: usize },

    #[error("invalid hidden-unit permutation: {0}")]
    BadPermutation(String),

    #[error("method `{0}` has no tunable hyperparameter")]
    NotTunable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
