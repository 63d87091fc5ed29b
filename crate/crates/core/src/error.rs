use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("could not make coefficient path stationary after {halvings} halvings (spectral radius {radius:.4})")]
    NotStationary { halvings: usize, radius: f64 },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("memory budget exceeded: {what} needs {needed_bytes} bytes, budget is {budget_bytes} bytes")]
    MemoryBudget {
        what: String,
        needed_bytes: u64,
        budget_bytes: u64,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NotStationary { .. }
            | Error::NotPsd { .. }
            | Error::NotSymmetric(_)
            | Error::Singular(_) => ErrorKind::Numerical,
            _ => ErrorKind::Input,
        }
    }
}
