use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates a documented precondition.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// Contraction rate outside the open unit interval.
    #[error("contraction rate {0} is outside (0, 1)")]
    InvalidRate(f64),

    /// `ηλ > 1` makes the Lyapunov bound vacuous.
    #[error("eta*lambda = {0} exceeds 1; the contraction factor would be negative")]
    VacuousBound(f64),

    /// Stationary norm requested with zero weight decay.
    #[error("no stationary norm without weight decay (lambda = 0)")]
    NoStationaryPoint,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("modulus {0} is not prime")]
    NotPrime(u64),

    #[error("infeasible norm targets: {0}")]
    InfeasibleTargets(String),

    #[error("design matrix is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },

    #[error("series is empty")]
    EmptySeries,

    #[error("series too short: need at least {need}, got {got}")]
    SeriesTooShort { need: usize, got: usize },

    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("regression needs at least 3 points with distinct x")]
    DegenerateFit,

    #[error("step {step} is outside the schedule horizon 0..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("training diverged at step {0} (non-finite parameters)")]
    Diverged(usize),

    #[error("malformed bundle at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}
