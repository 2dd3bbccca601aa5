use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("annotation set has no marks")]
    EmptyAnnotation,

    #[error("annotation references object {object_id}, session has {num_objects} objects")]
    UnknownObject { object_id: u8, num_objects: u8 },

    #[error("mark ({x}, {y}) is outside the {width}x{height} frame")]
    MarkOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("frame {frame} is out of range for a {len}-frame video")]
    FrameOutOfRange { frame: usize, len: usize },

    #[error("no sources given to fusion")]
    NoSources,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

pub(crate) fn mismatch(op: &'static str, expected: impl core::fmt::Display, got: impl core::fmt::Display) -> Error {
    use alloc::string::ToString;
    Error::DimensionMismatch {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
