use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("time {t} outside [{lo}, {hi}]")]
    OutOfBounds { t: f64, lo: f64, hi: f64 },

    #[error("particle count overflow: {0} particles exceed the supported maximum")]
    ParticleOverflow(u64),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("comparison precondition violated at site {site}, time {time}: {upper} < {lower}")]
    OrderViolation {
        site: usize,
        time: f64,
        upper: f64,
        lower: f64,
    },

    #[error("degenerate Monte Carlo estimate: only {hits} of {n_samples} samples carry weight")]
    Degenerate { hits: usize, n_samples: usize },

    #[error("replica {index} failed: {source}")]
    Replica {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("block outside the simulated window: {0}")]
    BlockOutsideWindow(String),

    #[error("enumeration of {count} items exceeds the exhaustive bound {bound}")]
    EnumerationBound { count: u128, bound: u128 },

    #[error("{} point(s) failed: {}", .0.len(), .0.join("; "))]
    Aggregate(Vec<String>),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
