use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{layer}` expects {expected} input channels, found {found}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },

    #[error("spatial underflow at `{layer}`: input is {h}x{w}")]
    SpatialUnderflow { layer: String, h: usize, w: usize },

    #[error("layer `{0}` is not present in the activation cache")]
    NotCached(String),

    #[error("layer `{0}` is not part of the loss configuration")]
    LayerNotConfigured(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimization diverged at iteration {iteration} after {restarts} step halvings")]
    Diverged { iteration: usize, restarts: usize },

    #[error(transparent)]
    Weights(#[from] WeightError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: expected 3 color channels, found {channels}")]
    UnsupportedChannels { path: PathBuf, channels: u8 },

    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("manifest record references missing path {0}")]
    MissingPath(PathBuf),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 1 usage, 2 I/O, 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } => 3,
            Error::Weights(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::UnsupportedChannels { .. }
            | Error::ManifestParse { .. }
            | Error::MissingPath(_)
            | Error::Json(_) => 2,
            _ => 1,
        }
    }
}

/// Failures while decoding or validating a weight container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("bad magic {0:?}, expected \"DGCW\"")]
    BadMagic([u8; 4]),

    #[error("unsupported weight file version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated weight file while reading {0}")]
    Truncated(String),

    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),

    #[error("entry name is not valid UTF-8")]
    InvalidName,

    #[error("duplicate entry `{0}`")]
    DuplicateEntry(String),

    #[error("entry `{entry}` has unsupported dtype code {code}")]
    UnsupportedDtype { entry: String, code: u8 },

    #[error("missing entry `{0}`")]
    MissingEntry(String),

    #[error("unexpected entry `{0}`")]
    ExtraEntry(String),

    #[error("entry `{entry}` has dims {found:?}, expected {expected:?}")]
    DimMismatch {
        entry: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("entry `{0}` is too large for the container")]
    EntryTooLarge(String),
}
