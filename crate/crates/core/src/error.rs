use thiserror::Error;

#[derive(Debug, Error)]
pub enum ZdqError {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("unstable source: largest eigenvalue of A'A is {alpha}, must be < 1")]
    UnstableSource { alpha: f64 },
    #[error("noise covariance is not symmetric positive definite")]
    BadCovariance,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("symbol {symbol} has belief mass {mass:e}, below the mass floor")]
    ImpossibleSymbol { symbol: usize, mass: f64 },
    #[error("{what}: size {size} exceeds budget {budget}")]
    BudgetExceeded {
        what: &'static str,
        size: usize,
        budget: usize,
    },
    #[error("no beliefs supplied")]
    EmptyBeliefs,
    #[error("value iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("policy was designed for model {expected}, config describes {found}")]
    ModelMismatch { expected: String, found: String },
    #[error("encoder and decoder beliefs diverged at t = {t}")]
    Desync { t: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ZdqError> = std::result::Result<T, E>;
