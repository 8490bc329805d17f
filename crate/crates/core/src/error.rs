use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("non-finite entry encountered")]
    NonFinite,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("negative eigenvalue {0}")]
    NegativeEigenvalue(f64),

    #[error("basis is not orthonormal (max deviation {0:e})")]
    NonOrthonormalBasis(f64),

    #[error("no unique optimum: average Hessian is singular")]
    NoUniqueOptimum,

    #[error("instance is not strongly convex (mu = {0:e}); use the convex fixed point instead")]
    NotStronglyConvex(f64),

    #[error("no stable step size: every grid point diverged")]
    NoStableStepSize,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
