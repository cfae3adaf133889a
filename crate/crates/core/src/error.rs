use std::io;
use std::path::{Path, PathBuf};

/// Errors produced across the crate.
///
/// Variants are grouped by category; see [`Error::is_numeric`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed shard {}: {reason}", path.display())]
    MalformedShard { path: PathBuf, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("term {term_id} is unscorable: {positives} positives, {required} required")]
    Unscorable {
        term_id: u32,
        positives: usize,
        required: usize,
    },

    #[error("unknown reference: {0}")]
    UnknownReference(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by numerics (NaN/inf during training or in gradients).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn malformed(path: &Path, reason: impl Into<String>) -> Self {
        Error::MalformedShard {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

/// Attaches a path to I/O errors.
pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| {
            if source.kind() == io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })
    }
}
