use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("division by zero: active {what} for service {service} has zero duration")]
    DivisionByZero { what: &'static str, service: usize },

    /// The Lagrangian is unbounded below at the given dual point
    /// (`mu - eta <= 0` for a service that still has to be computed).
    #[error("dual point outside the domain: mu - eta = {gap:e} for service {service}")]
    Unbounded { service: usize, gap: f64 },

    #[error("scenario is infeasible: {0}")]
    Infeasible(String),

    #[error("exhaustive search over {services} services exceeds the limit of {limit}")]
    LimitExceeded { services: usize, limit: usize },

    #[error("bisection bracket could not be established for {0}")]
    BracketFailure(&'static str),

    #[error("lambert W0 is undefined for x = {0} < -1/e")]
    LambertDomain(f64),

    #[error("solver did not reach an optimal status: {0}")]
    Solver(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
