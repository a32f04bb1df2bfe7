use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    #[error("matrix is not a rotation (orthonormality error {0:e})")]
    NotARotation(f64),
    #[error("sequence too short: need at least {needed} frames, got {got}")]
    SequenceTooShort { needed: usize, got: usize },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("duration yields zero frames")]
    BadDuration,
    #[error("invalid diffusion step count {0}")]
    BadSteps(usize),
    #[error("diffusion step {m} outside [{lo}, {hi}]")]
    BadStep { m: usize, lo: usize, hi: usize },
    #[error("invalid step pair m={m}, m_prev={m_prev}")]
    BadStepPair { m: usize, m_prev: usize },
    #[error("gamma = {0} requires a contrastive encoder")]
    MissingEncoder(f64),
    #[error("model is untrained: {0}")]
    UntrainedModel(String),
    #[error("{got} dancers exceeds the model maximum of {max}")]
    TooManyDancers { got: usize, max: usize },
    #[error("negative construction needs at least one donor group besides the anchor")]
    InsufficientDonors,
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("audio of {frames} frames is shorter than one window of {window}")]
    AudioTooShort { frames: usize, window: usize },
    #[error("bad cost matrix: {0}")]
    BadMatrix(String),
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("no music beats supplied")]
    NoBeats,
    #[error("need at least 2 dancers, got {0}")]
    TooFewDancers(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown {kind} `{name}`")]
    UnknownStrategy { kind: &'static str, name: String },
    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
