use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape {0:?}: extents must be a nonempty list of positive integers")]
    InvalidShape(Vec<usize>),

    #[error("{op}: non-finite value produced or supplied")]
    NonFinite { op: &'static str },

    #[error("operation `{0}` is not differentiable")]
    UnsupportedOp(&'static str),

    #[error("{what} must be strictly {sign}, found {value} at index {index}")]
    SignViolation {
        what: &'static str,
        sign: &'static str,
        index: usize,
        value: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what} {value} out of range {lo}..={hi}")]
    OutOfRange {
        what: &'static str,
        value: i64,
        lo: i64,
        hi: i64,
    },

    #[error("value {value} at index {index} outside [-1, 1]")]
    ValueOutOfRange { index: usize, value: f32 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("truncated {what}: expected {expected} bytes, found {actual}")]
    Truncated {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("activation memory budget of {budget} bytes exceeded at sequence length {seq_len}")]
    Capacity { seq_len: usize, budget: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape { op, expected: expected.to_vec(), actual: actual.to_vec() }
    }
}
