use std::fmt;

use thiserror::Error;

/// Standing assumptions on an output-estimation instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// `A` is Hurwitz stable.
    Stability,
    /// `(A, C)` is observable.
    Observability,
    /// `W1` and `W2` are positive definite.
    PositiveNoise,
    /// The optimal filter is controllable.
    ControllableOptimum,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Assumption::Stability => "A must be Hurwitz stable",
            Assumption::Observability => "(A, C) must be observable",
            Assumption::PositiveNoise => "W1 and W2 must be positive definite",
            Assumption::ControllableOptimum => "the Kalman filter must be controllable",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular or too ill-conditioned")]
    SingularMatrix,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not Hurwitz stable")]
    NotStable,
    #[error("filter is not controllable (Sigma22 is singular)")]
    NotControllable,
    #[error("filter is not informative (Sigma12 is rank deficient)")]
    NotInformative,
    #[error("Riccati solver failed: {0}")]
    RiccatiFailure(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(Assumption),
    #[error("functional is infinite in the finite-difference neighbourhood")]
    OutOfDomain,
    #[error("infeasible starting point: {0}")]
    InfeasibleStart(String),
    #[error("rejection sampling exhausted after {attempts} attempts while generating {what}")]
    GenerationExhausted { what: &'static str, attempts: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
