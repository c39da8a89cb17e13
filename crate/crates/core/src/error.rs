use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("transcript of {labels} labels needs at least {required} frames, utterance has {frames}")]
    CtcInfeasible {
        labels: usize,
        required: usize,
        frames: usize,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("missing feature file {}", .0.display())]
    MissingFeature(PathBuf),

    #[error("missing checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("stale features: {0}")]
    StaleFeatures(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::SampleRateMismatch { .. } => "SampleRateMismatch",
            Error::Shape(_) => "ShapeError",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::CtcInfeasible { .. } => "CtcInfeasible",
            Error::Alignment(_) => "AlignmentError",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::MissingFeature(_) => "MissingFeature",
            Error::MissingCheckpoint(_) => "MissingCheckpoint",
            Error::Format(_) => "FormatError",
            Error::StaleFeatures(_) => "StaleFeatures",
            Error::Io(_) | Error::Wav(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Tensor(_) => "TensorError",
        }
    }
}
