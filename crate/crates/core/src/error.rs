use thiserror::Error;

/// Failure modes shared across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error(
        "truncation leakage {leakage:.3e} exceeds {threshold:.1e} with n_max = {n_max}; \
         rerun with a larger n_max"
    )]
    Truncation { leakage: f64, threshold: f64, n_max: usize },

    #[error("Krylov propagator did not converge: error estimate {estimate:.3e} at subspace dimension {dim}")]
    KrylovNonConvergence { estimate: f64, dim: usize },

    #[error("eigensolver did not converge: {0}")]
    EigenNonConvergence(String),

    #[error("master-equation step did not converge: observables still change by {change:.3e} at dt = {dt:.3e} ms")]
    StepNonConvergence { change: f64, dt: f64 },

    #[error("density matrix lost positivity: minimum eigenvalue {min_eigenvalue:.3e}")]
    Positivity { min_eigenvalue: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::DimensionMismatch { .. } => 2,
            Error::Truncation { .. }
            | Error::KrylovNonConvergence { .. }
            | Error::EigenNonConvergence(_)
            | Error::StepNonConvergence { .. }
            | Error::Positivity { .. } => 3,
            Error::Io(_) => 4,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
