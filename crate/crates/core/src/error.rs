use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hermite degree {degree} exceeds the supported maximum {max}")]
    UnsupportedDegree { degree: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension: {what} = {value} (maximum {max})")]
    UnsupportedDimension {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("functional `{label}` is not finite at quadrature node {node:?}")]
    Evaluation { label: String, node: Vec<f64> },

    #[error("degenerate functional: no chaos coefficient above {tol:e}")]
    DegenerateFunctional { tol: f64 },

    #[error("chaos level {0} is absent from the expansion")]
    AbsentLevel(usize),

    #[error("covariance model produced a non-finite entry at lag {lag:?}")]
    NonFiniteCovariance { lag: Vec<f64> },

    #[error("r(0) is not whitenable: {0}")]
    NotWhitenable(String),

    #[error("covariance model is not whitened (r(0) != Id)")]
    NotWhitened,

    #[error("combinatorial budget exceeded: more than {budget} candidate tables")]
    BudgetExceeded { budget: usize },

    #[error("quadrature budget exceeded: {0}")]
    QuadratureBudget(String),

    #[error("condition (C1) failed: {0}")]
    C1Failed(String),

    #[error("spectral model error: {0}")]
    Spectral(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("insufficient replicates: need at least {need}, got {got}")]
    InsufficientReplicates { need: usize, got: usize },

    #[error("moment order p = {p} is not supported by the declared integrability p = {declared}")]
    UnsupportedMoment { p: f64, declared: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
