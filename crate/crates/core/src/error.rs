use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("empty dataset")]
    EmptyDataSet,
    #[error("degenerate feature map `{0}`: every feature vanishes on the data")]
    DegenerateFeatureMap(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("stagnant residual: successive residuals coincide")]
    StagnantResidual,
    #[error("degenerate angle: c must be strictly below 1")]
    DegenerateAngle,
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing {0} in dataset")]
    MissingInput(&'static str),
    #[error("infeasible bounds: lower {lower} exceeds upper {upper} at index {index}")]
    InfeasibleBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("solver failure at step {step}: {reason}")]
    SolverFailure { step: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
