use thiserror::Error;

/// Errors raised by mesh generation, assembly, solvers and the experiment runner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grading: {0}")]
    InvalidGrading(String),
    #[error("refinement selected no cells (axis {axis}, [{lo}, {hi}))")]
    NoCellsSelected { axis: usize, lo: f64, hi: f64 },
    #[error("singular jacobian on cell {cell} (|det J| = {det:e})")]
    SingularJacobian { cell: usize, det: f64 },
    #[error("unsupported element: dim={dim}, order={order}")]
    UnsupportedElement { dim: usize, order: usize },
    #[error("euclidean inner product has the identity as Gram matrix")]
    GramIsIdentity,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },
    #[error("riesz map solve failed: {0}")]
    RieszSolveFailed(String),
    #[error("eigenvalue estimation failed: {0}")]
    EigFailed(String),
    #[error("search direction is zero")]
    ZeroDirection,
    #[error("threshold epsilon={epsilon:e} must be below f0={f0:e}")]
    InvalidThreshold { epsilon: f64, f0: f64 },
    #[error("state solve failed: {0}")]
    StateSolveFailed(String),
    #[error("adjoint solve failed: {0}")]
    AdjointSolveFailed(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
