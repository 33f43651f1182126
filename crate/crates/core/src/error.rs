use std::path::PathBuf;

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    MissingInput,
    Backend,
    Validation,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("distribution is not normalized: total mass {total:.9} (deficit {deficit:+.3e})")]
    NotNormalized { total: f64, deficit: f64 },

    #[error("distribution has residual mass {0:.3e}; use entropy bounds for truncated distributions")]
    TruncatedDistribution(f64),

    #[error("inconsistent distribution: {0}")]
    InconsistentDistribution(String),

    #[error("score lists disagree in length: {0}")]
    LengthMismatch(String),

    #[error("empty token selection: {0}")]
    EmptySelection(String),

    #[error("missing ungrounded scores required by {0}")]
    MissingUngrounded(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("unknown document id `{0}`")]
    UnknownDocId(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("trace cache miss for key {key}")]
    CacheMiss { key: String },

    #[error("trace integrity violation for key {key}: {detail}")]
    Integrity { key: String, detail: String },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("backend transport error (attempts: {attempts}, retryable: {retryable}): {message}")]
    Transport {
        message: String,
        attempts: u32,
        retryable: bool,
    },

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("backend failed: {0}")]
    Backend(String),

    #[error("index file version {found} does not match {expected}; rebuild the index")]
    IndexVersion { found: u32, expected: u32 },

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::MissingInput(_) => ErrorClass::MissingInput,
            Error::Transport { .. } | Error::Capability(_) | Error::Backend(_) | Error::CacheMiss { .. } => {
                ErrorClass::Backend
            }
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
