use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Structural validation failure of the Hessian (same class as a dimension mismatch).
    #[error("H is not symmetric (max |H - H^T| = {0:e})")]
    NotSymmetric(f64),

    #[error("H is not positive definite")]
    NotPositiveDefinite,

    #[error("active constraint rows are linearly dependent")]
    RankDeficient,

    #[error("QP is infeasible (homotopy blocked at tau = {tau})")]
    Infeasible { tau: f64 },

    #[error("iteration limit of {0} reached")]
    IterationLimit(usize),

    #[error("start solution is not optimal: {0}")]
    NotOptimalStart(String),

    #[error("unknown link `{0}`")]
    UnknownLink(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {0} != {1}")]
    LengthMismatch(usize, usize),

    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    File { path: String, message: String },
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>) -> Self {
        Error::DimensionMismatch(what.into())
    }

    pub(crate) fn at_cycle(self, cycle: usize) -> Self {
        Error::Cycle {
            cycle,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_run(self, run: String) -> Self {
        Error::Run {
            run,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through [`Error::Cycle`] and [`Error::Run`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Cycle { source, .. } | Error::Run { source, .. } => source.root(),
            other => other,
        }
    }
}
