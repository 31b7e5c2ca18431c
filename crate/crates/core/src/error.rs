use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("kernel row {row} sums to {sum}, expected 1")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("kernel entry ({row}, {col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("observable has stationary mean {mean:e}; pass auto_center to recenter it")]
    UncenteredObservable { mean: f64 },
    #[error("no unique stationary law: {0}")]
    NoStationaryLaw(String),
    #[error("supplied stationary vector is not invariant: {0}")]
    InvalidStationaryLaw(String),
    #[error("path enumeration too large: {count} paths exceeds the guard of {limit}")]
    TooLarge { count: u128, limit: u128 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("cannot load chain: {0}")]
    ChainLoadError(String),
    #[error("guard exceeded for {grid}: {detail}")]
    GuardExceeded { grid: String, detail: String },
    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}
