use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite logit at input {input}, label {label}")]
    NonFiniteLogit { input: usize, label: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid pivots: {0}")]
    Pivots(String),
    #[error("singular {which} (condition number {cond:.3e})")]
    Singular { which: String, cond: f64 },
    #[error("assumption violated: {}", .0.join("; "))]
    Assumption(Vec<String>),
    #[error("component {0} has zero variance")]
    ZeroVariance(usize),
    #[error("no feasible pivot candidate: {0}")]
    NoFeasiblePivot(String),
    #[error("invalid construction: {0}")]
    Construction(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schema error: {}", .0.join("; "))]
    Schema(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
