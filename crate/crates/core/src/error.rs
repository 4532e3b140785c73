use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Monte-Carlo law requires a sample budget")]
    MissingBudget,

    #[error("operation requires an exact finite-support law")]
    NotExact,

    #[error("invalid process model: {0}")]
    InvalidModel(String),

    #[error("transition matrix is not row-stochastic (row {row} sums to {sum})")]
    NotStochastic { row: usize, sum: f64 },

    #[error("probability table is not normalized (total mass {0})")]
    NotNormalized(f64),

    #[error("exhaustive search over {states} states exceeds the budget of {max}")]
    TooManyStates { states: usize, max: usize },

    #[error("sequence too short: {0}")]
    SequenceTooShort(String),

    #[error("index {index} outside the available sample [{first}, {last}]")]
    IndexOutOfRange { index: i64, first: i64, last: i64 },

    #[error("block component index {index} outside 1..={q}")]
    ComponentOutOfRange { index: i64, q: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("kernel is not degenerate under the marginal law (max conditional mean {0:e})")]
    NotDegenerate(f64),

    #[error("quantile function is not nonincreasing")]
    NonMonotoneQuantile,

    #[error("hypothesis check failed: {0}")]
    HypothesisFailed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
