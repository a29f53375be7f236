use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// A file did not match the expected on-disk format.
    #[error("format error in {field}: {msg}")]
    Format { field: String, msg: String },
    /// A text input failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input is structurally valid but numerically unusable (zero power,
    /// all-equal scores, batch too small for statistics, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Two aligned sequences disagree; `index` is the first offending position.
    #[error("alignment error at index {index}: {msg}")]
    Alignment { index: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
