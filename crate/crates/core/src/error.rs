use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error at ({row}, {col}): {msg}")]
    Domain { row: usize, col: usize, msg: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("singular or ill-conditioned transform: {0}")]
    Singular(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated section `{0}`")]
    Truncated(&'static str),

    #[error("index {index} at position {position} is out of range for codebook of size {c}")]
    IndexOutOfRange { position: usize, index: u64, c: usize },

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
