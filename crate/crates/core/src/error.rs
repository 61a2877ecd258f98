use thiserror::Error;

#[derive(Debug, Error)]
pub enum SgklError {
    #[error("k too large: k={k} must be smaller than the node count {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("isolated node {0}: degree is zero")]
    IsolatedNode(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("signal {0} has no observed entries")]
    EmptyMask(usize),

    #[error("ill-conditioned x-update for signal {signal}")]
    IllConditioned { signal: usize },

    #[error("numerical blow-up: {message} (psi = {psi:?})")]
    NumericalBlowUp { message: String, psi: Vec<f64> },

    #[error("degenerate ground truth: missing entries have zero energy")]
    DegenerateGroundTruth,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SgklError {
    /// True for failures that originate in the numerics rather than in the
    /// inputs or the environment.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SgklError::IllConditioned { .. }
                | SgklError::NumericalBlowUp { .. }
                | SgklError::DegenerateGroundTruth
        )
    }
}

pub type Result<T> = std::result::Result<T, SgklError>;
