use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("coupling of control {j} at ({l}, {k}) violates skew-Hermiticity: {detail}")]
    SkewViolation { j: usize, l: usize, k: usize, detail: String },
    #[error("truncation {n} exceeds tabulated range {n_max}")]
    OutOfRange { n: usize, n_max: usize },
    #[error("unknown gap id {0}")]
    UnknownGap(usize),
    #[error("generator {0} is not skew-Hermitian (defect {1:.3e})")]
    NotSkew(usize, f64),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("model file: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
