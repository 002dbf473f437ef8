use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: input is not valid UTF-8", .0.display())]
    NotUtf8(PathBuf),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocabulary budget too small: target {target} but {required} tokens are forced")]
    VocabularyBudget { target: usize, required: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid syllable map: {0}")]
    InvalidSyllableMap(String),

    /// An extraction selector matched nothing, e.g. "body not found".
    #[error("{0} not found")]
    MissingField(&'static str),

    #[error("invalid extraction rules: {0}")]
    InvalidRules(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary size mismatch: checkpoint vocab_size is {checkpoint}, vocabulary file has {vocabulary} tokens")]
    VocabularyMismatch { checkpoint: usize, vocabulary: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("sequence of length {len} exceeds max_position {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("no masked positions")]
    NoMaskedPositions,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at step {step} (non-finite loss); last good checkpoint: {}",
        checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Diverged {
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("fetch: {0}")]
    Fetch(String),
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

/// Reads a file that must be UTF-8 text.
pub(crate) fn read_utf8(path: &std::path::Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|_| Error::NotUtf8(path.to_path_buf()))
}

pub(crate) fn write_file(path: &std::path::Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
