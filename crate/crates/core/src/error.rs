use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid system model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Riccati iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    RiccatiNotConverged { iterations: usize, last_change: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("loss window starting at step {0} is incomplete")]
    IncompleteWindow(usize),

    #[error("operation requires the affine prediction model")]
    NotAffine,

    #[error("projected gradient did not converge (final gradient-mapping norm {grad_norm:e})")]
    NotConverged { grad_norm: f64 },

    #[error("scenario library: {0}")]
    Library(String),

    #[error("tuner invariant violated: {0}")]
    Tuner(String),

    #[error("external predictor: {0}")]
    Adapter(#[from] crate::l2d::external::AdapterError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}
