use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("variable count {0} out of range (expected 1..=24)")]
    VarCountOutOfRange(usize),

    #[error("lattice vector has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at mask index {index}")]
    NonFinite { index: usize },

    #[error("variable counts differ: {0} vs {1}")]
    VarCountMismatch(usize, usize),

    #[error("gamma split violates its box constraint at mask {mask}: |{value}| > {bound}")]
    ConstraintViolation { mask: usize, value: f64, bound: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("order {k} out of range 1..={n}")]
    OrderOutOfRange { k: usize, n: usize },

    #[error("vector dimensions do not match: {0}")]
    DimensionMismatch(String),

    #[error("category sets differ between the two sides: {0}")]
    CategoryMismatch(String),

    #[error("need at least {needed} {what}, got {got}")]
    NotEnoughData { needed: usize, got: usize, what: &'static str },

    #[error("dataset spec invalid: {0}")]
    DatasetSpec(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: u64 },

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{path}: parse error: {reason}")]
    Parse { path: String, reason: String },

    #[error("manifest inconsistent: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    pub(crate) fn parse(path: &std::path::Path, reason: impl Into<String>) -> Self {
        Error::Parse { path: path.display().to_string(), reason: reason.into() }
    }
}
