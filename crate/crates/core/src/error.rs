use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the memseal library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest load failed for record `{id}`: {reason}")]
    ManifestLoad { id: String, reason: String },

    #[error("manifest parse error at line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode/encode error on {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("templated set too small: need {needed} items, have {available}")]
    Capacity { needed: usize, available: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("invalid parameter {name}={value}: must be {constraint}")]
    Parameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("caption oracle failed on item `{id}`: {reason}")]
    Oracle { id: String, reason: String },

    #[error("detector calibration failed: {0}")]
    Calibration(String),

    #[error("domain error in test statistic: {0}")]
    Domain(String),

    #[error("training aborted at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("sampler failed after retries ({positives} of {completed} queries were positive): {reason}")]
    SamplerFailed {
        completed: usize,
        positives: usize,
        reason: String,
    },

    #[error("missing upstream artifact: {0}")]
    MissingArtifact(PathBuf),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Image {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
