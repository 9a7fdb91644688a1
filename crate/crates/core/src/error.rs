use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("eigensolver did not converge for eigenvalue {index} after {iterations} iterations")]
    EigenNoConvergence { index: usize, iterations: usize },

    #[error("spectrum scan failed at n_g = {n_g}: {source}")]
    ScanPoint {
        n_g: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("charge dispersion is zero; splitting cannot be inverted")]
    NoInversion,

    #[error("no samples fall inside the matching window")]
    EmptyOverlap,

    #[error("matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("label {label} at index {index} is out of range (expected < {limit})")]
    LabelOutOfRange { index: usize, label: usize, limit: usize },

    #[error("observation {index} has zero probability under every state")]
    ZeroProbability { index: usize },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("series contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("fit did not converge after {restarts} restarts; final weighted residual {residual:e}")]
    FitNoConvergence { restarts: usize, residual: f64, residual_trace: Vec<f64> },

    #[error("relaxation did not converge in {iterations} sweeps (residual {residual:e})")]
    SolverNoConvergence { iterations: usize, residual: f64, history: Vec<f64> },

    #[error("unknown electrode `{0}`")]
    UnknownElectrode(String),

    #[error("electrodes `{a}` and `{b}` overlap")]
    ElectrodeOverlap { a: String, b: String },

    #[error("missing weighting potential for electrode `{0}`")]
    MissingWeighting(String),

    #[error("grid of {cells} cells exceeds the budget of {budget}")]
    GridBudget { cells: usize, budget: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
