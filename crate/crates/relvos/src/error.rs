use std::path::PathBuf;

pub type Result<T, E = IoError> = std::result::Result<T, E>;

/// Everything that can go wrong outside the numeric engine.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: no frames found (expected numbered .ppm, .pgm or .png files in frames/)")]
    MissingFrames { path: PathBuf },

    #[error("{path}: {width}x{height} does not match the sequence size {expected_width}x{expected_height}")]
    DimensionMismatch {
        path: PathBuf,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },

    #[error("{path}: {masks} mask files for {frames} frames")]
    MaskCountMismatch { path: PathBuf, frames: usize, masks: usize },

    #[error("object ids must be contiguous from 1, found {found:?}")]
    NonContiguousIds { found: Vec<u8> },

    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unknown sequence {0:?}")]
    UnknownSequence(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Engine(#[from] relvos_core::Error),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl ToString) -> Self {
        Self::Format {
            what,
            message: message.to_string(),
        }
    }
}
