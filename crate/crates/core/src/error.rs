use thiserror::Error;

/// Errors produced by the bound estimator, the attack harness and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("sample {index} has zero l2 norm")]
    ZeroNormSample { index: usize },

    #[error("numerical error: {0}")]
    NumericalError(String),

    #[error("vector is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("value out of domain: {0}")]
    DomainError(String),

    #[error("index error: {0}")]
    IndexError(String),

    #[error("not enough unabsorbed samples: need {needed}, have {available}")]
    BudgetExhausted { needed: usize, available: usize },

    #[error("alpha * n = {0} is below one sample")]
    AlphaTooSmall(f64),

    #[error("metric mismatch: region uses {region}, request uses {request}")]
    MetricMismatch { region: String, request: String },

    #[error("partition error: {0}")]
    PartitionError(String),

    #[error("bracket error: {0}")]
    BracketError(String),

    #[error("oracle budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("labels are required but missing")]
    MissingLabels,

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("format error: {0}")]
    FormatError(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of floating-point computation rather than of input validation.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalError(_) | Error::NotNormalized { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
