use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model functions not evaluable at x = {x}: {what}")]
    NonEvaluable { x: f64, what: String },

    #[error("standing assumptions violated: {}", failed.join("; "))]
    AssumptionViolated { failed: Vec<String> },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("bad parameter `{name}`: {reason}")]
    BadParameter { name: String, reason: String },

    #[error("trajectory left [0, {ceiling}] at t = {t} (state {state})")]
    BlowUp { t: f64, state: f64, ceiling: f64 },

    #[error("no convergence in {what}: last values {last:?}")]
    NoConvergence { what: String, last: Vec<f64> },

    #[error("integrand singular at u = {at}")]
    SingularIntegrand { at: f64 },

    #[error("epsilon must lie in (0, 1), got {0}")]
    BadEpsilon(f64),

    #[error("step dt = {dt} exceeds stability guard {limit}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("state {state} exceeded overflow guard {ceiling} on path {path}")]
    OverflowGuard { path: usize, state: f64, ceiling: f64 },

    #[error("grid too short: y_max = {y_max}, need at least {required}")]
    GridTooShort { y_max: f64, required: f64 },

    #[error("transform left its admissible range at s = {at} (value {value})")]
    SingularityHit { at: f64, value: f64 },

    #[error("s = {s} outside the admissible range [0, {cap})")]
    DomainCap { s: f64, cap: f64 },

    #[error("Poincaré iteration diverged at s = {s}")]
    IterationDiverged { s: f64 },

    #[error("scale function diverges at the {end} end")]
    ScaleDiverges { end: String },

    #[error("hypotheses fail: {0}")]
    HypothesesFail(String),

    #[error("classification inconclusive: {0}")]
    Inconclusive(String),

    #[error("empty sample")]
    EmptySample,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn bad(name: &str, reason: impl Into<String>) -> Self {
        Error::BadParameter { name: name.to_string(), reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
