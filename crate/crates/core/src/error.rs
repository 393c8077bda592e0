use thiserror::Error;

/// Errors raised by the design, simulation and linear-algebra routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("{step}: matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { step: &'static str, condition: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("eigenvalue iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("infeasible power constraint: {0}")]
    Infeasible(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl Error {
    /// Re-labels a singular-matrix error with the design step that hit it.
    pub fn at_step(self, step: &'static str) -> Self {
        match self {
            Error::Singular { condition, .. } => Error::Singular { step, condition },
            other => other,
        }
    }

    /// True for failures of the numerical routines (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::Degenerate(_)
                | Error::NoConvergence { .. }
                | Error::Infeasible(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
