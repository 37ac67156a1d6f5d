use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A precondition on an argument or on a coefficient family does not hold.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Requested separation radius lies outside what the family can attain.
    #[error("infeasible separation: rho^2 = {requested} is outside the attainable range ({lower}, {upper}]")]
    InfeasibleSeparation {
        requested: f64,
        lower: f64,
        upper: f64,
    },

    #[error("active set too large: search box side {side} exceeds cap {cap}")]
    ActiveSetTooLarge { side: u64, cap: u64 },

    #[error("tuning failed: {0}")]
    TuningFailed(String),

    #[error("quadrature error estimate {achieved:e} above tolerance {tol:e}")]
    Quadrature { achieved: f64, tol: f64 },

    #[error("pilot index set has {size} entries, above the cap {cap}; use a smaller pilot threshold")]
    PilotTooLarge { size: usize, cap: usize },

    #[error("replication {rep} failed: {source}")]
    Replication { rep: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures of a numerical routine rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::InfeasibleSeparation { .. }
            | Error::ActiveSetTooLarge { .. }
            | Error::TuningFailed(_)
            | Error::Quadrature { .. }
            | Error::PilotTooLarge { .. } => true,
            Error::Replication { source, .. } => source.is_numerical(),
            Error::Domain(_) | Error::Config(_) => false,
        }
    }
}
