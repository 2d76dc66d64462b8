use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} lies outside the domain: {detail}")]
    DomainViolation { index: usize, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance factorization failed at jitter {jitter:e} (diag/offdiag ratio {condition:e})")]
    Factorization { jitter: f64, condition: f64 },

    #[error("variational fit diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("preference provider failed: {0}")]
    Provider(String),

    #[error("session state: {0}")]
    Session(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
