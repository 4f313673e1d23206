use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("event {index}: {message}")]
    Validation { index: usize, message: String },

    #[error("event {index}: timestamp {t} precedes previous timestamp {previous}")]
    Ordering { index: usize, t: u64, previous: u64 },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("pixel ({x}, {y}) lies outside the cell-covered region")]
    OutOfRegion { x: u16, y: u16 },

    #[error("event at t={t} us outside window [{start}, {end})")]
    WindowBoundary { t: u64, start: u64, end: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
