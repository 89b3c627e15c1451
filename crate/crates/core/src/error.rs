use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix {0} is not symmetric")]
    NotSymmetric(&'static str),

    #[error("matrix {0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("matrix {0} is not positive semidefinite")]
    NotPositiveSemidefinite(&'static str),

    #[error("(A, B) is not controllable: controllability rank {rank} < {n}")]
    Uncontrollable { rank: usize, n: usize },

    #[error("type probabilities must sum to 1 (got {0})")]
    ProbabilitySum(f64),

    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("operation requires a scalar plant (n = 1), got n = {0}")]
    NonScalar(usize),

    #[error("grid too small: {fraction:.3} of quadrature queries fall beyond the extrapolation margin")]
    GridTooSmall { fraction: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("config error in field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error: 2 for usage/config problems, 3 for
    /// numerical or internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::GridTooSmall { .. } => 3,
            _ => 2,
        }
    }
}
