use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A point handed to a loss lies outside the region the operation needs.
    #[error("domain violation ({reason}){}: value {value}", coord_suffix(.coord))]
    DomainViolation {
        coord: Option<usize>,
        value: f64,
        reason: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("isoperimetry witness needs a single component, model has r = {0}")]
    MixtureNotSupported(usize),

    #[error("parameter {index} = {value} lies outside [{lo}, {hi}]")]
    ParamOutOfDomain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("grid net needs {required:.3e} points, budget is {budget}")]
    NetBudgetExceeded { required: f64, budget: usize },

    #[error("training loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize, last_finite: Vec<f64> },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("configuration infeasible: {0}")]
    ConfigInfeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn coord_suffix(coord: &Option<usize>) -> String {
    match coord {
        Some(i) => format!(" at coordinate {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn domain(coord: Option<usize>, value: f64, reason: &'static str) -> Self {
        Error::DomainViolation {
            coord,
            value,
            reason,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
