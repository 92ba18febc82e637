use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: index out of range ({index} with {count} entries)")]
    IndexOutOfRange {
        line: usize,
        index: i64,
        count: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown view id `{0}`")]
    UnknownView(String),

    #[error("click at ({x}, {y}) in view `{view}` does not hit a surface")]
    BackgroundClick { view: String, x: u32, y: u32 },

    #[error("unselectable material {material}: {reason}")]
    Unselectable { material: i32, reason: String },

    #[error("view `{0}` has no similarity raster")]
    MissingSimilarity(String),

    #[error("similarity map for view `{view}` not found at {path}")]
    MissingFrame { view: String, path: PathBuf },

    #[error("mesh has no uv coordinates")]
    MissingUv,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("only {achieved} of {wanted} unoccluded views found in {attempts} attempts")]
    TooFewViews {
        achieved: usize,
        wanted: usize,
        attempts: usize,
    },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("busy: {0}")]
    Busy(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad caller input rather than IO or internal failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
