use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("line {line}: rating {value} is not on the declared scale")]
    OffScale { line: usize, value: String },

    #[error("invalid rating scale: {0}")]
    InvalidScale(String),

    #[error("test fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),

    #[error("rating scale of {k} values cannot be split into {target} equal groups; supply a custom grouping")]
    NonDivisibleScale { k: usize, target: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("value {x} lies outside the law domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),

    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("ease system is singular; l2 = {0} is too small")]
    SingularSystem(f64),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("no grid point could be trained:\n{0}")]
    AllConfigsFailed(String),

    #[error("unrecognised file header (expected {expected}, found {found})")]
    BadHeader { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Encode(#[from] bincode::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
