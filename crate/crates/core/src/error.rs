use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("unknown factor `{0}`")]
    UnknownFactor(String),

    #[error("malformed expression `{expr}`: {reason}")]
    MalformedExpression { expr: String, reason: String },

    #[error("unknown view column `{0}`")]
    UnknownColumn(String),

    #[error("level {0} outside (0, 1)")]
    LevelOutOfRange(f64),

    #[error("column `{0}` has zero standard deviation")]
    ZeroDispersion(String),

    #[error("CVaR tail set is empty or carries no probability")]
    EmptyTail,

    #[error("invalid view: {0}")]
    InvalidView(String),

    #[error("constraint row `{0}` is identically zero")]
    ZeroRow(String),

    #[error("moment view needs {rows} rows, above the cap of {cap}")]
    TooManyRows { rows: usize, cap: usize },

    #[error("support violation at scenario {0}: positive mass where the reference has none")]
    SupportViolation(usize),

    #[error("constraints are infeasible: {0}")]
    Infeasible(String),

    #[error(
        "solver did not converge after {iterations} iterations (gradient norm {gradient_norm:e})"
    )]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),

    #[error("missing posterior for `{0}`")]
    MissingPosterior(String),

    #[error("invalid pricing input: {0}")]
    InvalidPricing(String),

    #[error("non-positive implied volatility {vol} in scenario {scenario}")]
    NonPositiveVolatility { scenario: usize, vol: f64 },

    #[error("infeasible portfolio constraints: {0}")]
    InfeasiblePortfolio(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}
