use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed manifest line: {msg}")]
    ManifestLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid record {id}: {msg}")]
    InvalidRecord { id: String, msg: String },
    #[error("duplicate utterance id {0}")]
    DuplicateId(String),
    #[error("text normalization: {0}")]
    Text(String),
    #[error("unknown tokenset {0}")]
    UnknownTokenset(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("audio: {0}")]
    Audio(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no monotonic alignment: {n_tokens} tokens cannot fit in {n_frames} frames")]
    NoAlignment { n_tokens: usize, n_frames: usize },
    #[error("unknown speaker {0}")]
    UnknownSpeaker(String),
    #[error("duplicate speaker {0}")]
    DuplicateSpeaker(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("external command failed: {msg}\n{diagnostics}")]
    External { msg: String, diagnostics: String },
    #[error("{failed} of {total} items failed: {details}")]
    Batch {
        failed: usize,
        total: usize,
        details: String,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
