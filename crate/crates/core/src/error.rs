use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("{path}: {source}")]
    File { path: String, source: io::Error },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error("extent overflow: {0:?}")]
    ExtentOverflow(Vec<u32>),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("unknown network preset {0:?}")]
    UnknownPreset(String),

    #[error("training diverged in {stage} at epoch {epoch}: loss is {loss}")]
    Divergence { stage: String, epoch: usize, loss: f64 },

    #[error("non-finite value in {stage} at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    #[error("no trained parameters for band group {0}")]
    MissingGroup(usize),

    #[error("missing ground-truth labels: {0}")]
    MissingLabels(String),

    #[error("instance too large for exhaustive enumeration: {labelings} labelings")]
    TooLarge { labelings: f64 },

    #[error("no labeled pixels in ground truth")]
    NoLabeledPixels,

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable identifier, used by the CLI's single-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) | Error::File { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::TrailingBytes(_) => "trailing_bytes",
            Error::ExtentOverflow(_) => "extent_overflow",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::Corrupt(_) => "corrupt",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::Divergence { .. } => "divergence",
            Error::NonFinite { .. } => "non_finite",
            Error::MissingGroup(_) => "missing_group",
            Error::MissingLabels(_) => "missing_labels",
            Error::TooLarge { .. } => "too_large",
            Error::NoLabeledPixels => "no_labeled_pixels",
            Error::Config(_) => "config",
        }
    }
}

/// `fs::read` with the path in the error.
pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    std::fs::read(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

/// `fs::create_dir_all` with the path in the error.
pub fn create_dir(path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::create_dir_all(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

/// `fs::write` with the path in the error.
pub fn write_file(path: impl AsRef<std::path::Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}
