use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum KsError {
    #[error("grid order must be even and at least 2, got {0}")]
    InvalidGridOrder(usize),

    #[error("point {0} lies outside [-1, 1]")]
    OutOfDomain(f64),

    #[error("fields live on different grids (orders {0} and {1})")]
    GridMismatch(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid operator parameters h={h}, nu={nu}: {reason}")]
    InvalidParams { h: f64, nu: f64, reason: &'static str },

    #[error("implicit operator is not invertible at h={h}, nu={nu}")]
    SingularOperator { h: f64, nu: f64 },

    #[error("non-finite state after t={t}")]
    NonFinite { t: f64 },

    #[error("linearized step called with a stale successor state")]
    StaleState,

    #[error("field violates Dirichlet boundary conditions (|u(±1)| = {0:e})")]
    BoundaryViolation(f64),

    #[error("GMRES stopped after {iterations} iterations at relative residual {residual:e}")]
    GmresNotConverged { iterations: usize, residual: f64 },

    #[error("Newton failed after {iterations} iterations, residual history {history:?}")]
    NewtonFailed { iterations: usize, history: Vec<f64> },

    #[error("trivial Floquet multiplier not found near +1 (closest at distance {0:e})")]
    TrivialMultiplier(f64),

    #[error("Hopf frequency {0:e} too small")]
    DegenerateHopf(f64),

    #[error("parameter nu={nu} is on the wrong side of nu*={nu_star}")]
    WrongSide { nu: f64, nu_star: f64 },

    #[error("bisection did not converge in {0} steps")]
    Bisection(usize),

    #[error("continuation failed: {0}")]
    Continuation(String),

    #[error("branch switching failed: {0}")]
    BranchSwitch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KsError>;
