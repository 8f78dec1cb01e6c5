//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sequence of {frames} frames cannot reach the final state of a {states}-state no-skip model")]
    InfeasibleSequence { frames: usize, states: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("no feasible training sequence (all shorter than the state count)")]
    AllSequencesInfeasible,

    #[error("unknown sign `{0}`")]
    UnknownSign(String),

    #[error("unknown state index {state} for sign `{sign}`")]
    UnknownState { sign: String, state: usize },

    #[error("rotation matrix is not orthonormal (max deviation {0:.3e})")]
    NonOrthonormalRotation(f64),

    #[error("mixture size mismatch: {0} vs {1}")]
    MixtureSizeMismatch(usize, usize),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("model bundle is missing the `{0}` stage")]
    MissingStage(&'static str),

    #[error("every hypothesis was pruned at frame {frame}; widen --state-beam / --sign-beam")]
    AllHypothesesPruned { frame: usize },

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed dataset record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },

    #[error("reference sign count is zero")]
    EmptyReference,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
