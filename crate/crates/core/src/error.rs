use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed WAV data: {0}")]
    Format(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("buffer too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("invalid input at index {index}: {reason}")]
    InvalidInput { index: usize, reason: String },
    #[error("pole on the unit circle at bin {bin}")]
    PoleOnUnitCircle { bin: usize },
    #[error("profile {index} has zero variance")]
    DegenerateProfile { index: usize },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("insufficient data for group {group}: {reason}")]
    InsufficientData { group: String, reason: String },
    #[error("subject {subject} has no {vowel} segments in the {part} partition")]
    IncompleteVowel {
        subject: String,
        vowel: String,
        part: String,
    },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("exact Shapley infeasible: {used} features used by the model (limit {limit})")]
    ExactInfeasible { used: usize, limit: usize },
    #[error("empty background set")]
    EmptyBackground,
    #[error("invalid speaker profile: {0}")]
    InvalidProfile(String),
    #[error("insufficient sample: {0}")]
    InsufficientSample(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown {kind} strategy `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
