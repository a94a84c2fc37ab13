use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("closed loop is not mean-square stable (spectral radius {spectral_radius:.6})")]
    Unstable { spectral_radius: f64 },

    #[error("system is not mean-square stabilizable: {detail}")]
    NotStabilizable {
        detail: String,
        /// Covariance inflation in effect, when the failure came from a DR synthesis.
        rho_sigma: Option<f64>,
    },

    #[error("DR synthesis infeasible: {0}")]
    Infeasible(String),

    #[error("insufficient data: need at least 2 samples, got {0}")]
    InsufficientData(usize),

    #[error("sample size {m} is below the minimum {m_min} required for the requested confidence")]
    SampleSize { m: usize, m_min: usize },

    #[error("empirical covariance is singular (min eigenvalue {min_eig:.3e}); set a regularization weight")]
    SingularCovariance { min_eig: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
