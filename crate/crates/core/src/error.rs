use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed CSV content, with the 1-based line it was found on.
    #[error("{message}, line {line}")]
    Parse { line: u64, message: String },

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error(
        "insufficient shots for class {class_name} in {audio_file}: found {found}, need {needed}"
    )]
    InsufficientShots {
        audio_file: String,
        class_name: String,
        found: usize,
        needed: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("prediction for unknown file {0}")]
    UnknownFile(String),

    #[error("no dataset assignment for file {0}")]
    MissingDataset(String),

    #[error("class mismatch for {audio_file}: {message}")]
    ClassMismatch { audio_file: String, message: String },

    #[error("harmonic mean of an empty list")]
    EmptyMean,

    #[error("wav: {0}")]
    Wav(String),

    #[error("window of {window} samples is longer than the signal ({len} samples)")]
    WindowTooLong { window: usize, len: usize },

    #[error("spectrogram bin count mismatch: template has {template}, query has {query}")]
    BinMismatch { template: usize, query: usize },

    #[error("every template had zero energy")]
    AllTemplatesSilent,

    #[error("no frames eligible for negative sampling")]
    NoNegativeFrames,

    #[error("event placement failed after {attempts} attempts")]
    PlacementFailure { attempts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
