use std::path::PathBuf;

/// Errors produced anywhere in the lifting and merging pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid depth {0}: must be positive and finite")]
    InvalidDepth(f64),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("malformed correspondence: {0}")]
    MalformedCorrespondence(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("label sets overlap: mask id {0} appears in both clouds")]
    LabelOverlap(u32),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("{path}: {msg}")]
    Validation { path: String, msg: String },
    #[error("load error: {0}")]
    Load(String),
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: png: {msg}", path.display())]
    Png { path: PathBuf, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures to locate or read a scene (as opposed to invalid values).
    pub fn is_load_error(&self) -> bool {
        matches!(
            self,
            Error::Load(_) | Error::Io { .. } | Error::Png { .. } | Error::Parse { .. }
        )
    }
}
