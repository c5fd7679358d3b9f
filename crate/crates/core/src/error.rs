use std::path::PathBuf;

/// Errors produced across feature extraction, training, conversion and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("expected sample rate {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },

    #[error("input of {len} samples is shorter than one {frame_len}-sample window")]
    TooShort { len: usize, frame_len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: checkpoint has never been trained", .0.display())]
    Untrained(PathBuf),

    #[error("non-finite {component} at step {step}")]
    NonFinite { component: &'static str, step: u64 },

    #[error("cannot read audio {}: {source}", path.display())]
    Audio {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("wav write failed: {0}")]
    Wav(#[from] hound::Error),

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
