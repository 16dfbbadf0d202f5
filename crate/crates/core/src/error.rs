use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A noise level (or derived quantity) outside the domain a formula is defined on.
    #[error("domain error in {formula}: {detail}")]
    Domain { formula: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Explicit scheme refused a step; `required_dt` is the largest step that is stable.
    #[error("unstable step: dt = {dt:e} exceeds the stability bound {required_dt:e}")]
    Stability { dt: f64, required_dt: f64 },

    #[error("training error: {0}")]
    Training(String),

    /// Training loss left the finite range or passed the divergence threshold.
    #[error("training diverged at step {step}: loss {loss:e}")]
    Diverged {
        step: usize,
        loss: f64,
        /// Loss of every completed step before the abort.
        trace: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(formula: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            formula,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(detail: impl Into<String>) -> Self {
        Error::Argument(detail.into())
    }
}
