use thiserror::Error;

use crate::fit::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no observations")]
    EmptyData,

    #[error("index must be a positive integer (line {line}): {detail}")]
    InvalidIndex { line: usize, detail: String },

    #[error("design needs g >= 2, h >= 2, m >= 1 (got g={g}, h={h}, m={m})")]
    DesignTooSmall { g: usize, h: usize, m: usize },

    #[error("missing cell observation (i={i}, j={j}, k={k})")]
    MissingCell { i: usize, j: usize, k: usize },

    #[error("duplicate cell observation (i={i}, j={j}, k={k})")]
    DuplicateCell { i: usize, j: usize, k: usize },

    #[error("unknown covariate column `{0}`")]
    UnknownCovariate(String),

    #[error("covariate `{name}` varies below its declared level (worst deviation {deviation:.3e})")]
    LevelViolation { name: String, deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-positive eigenvalue of V (lambda = {0})")]
    NonPositiveLambda(f64),

    #[error("dense oracle refuses n = {n} (limit {limit})")]
    TooLargeForDenseOracle { n: usize, limit: usize },

    #[error("normal-equation matrix is singular (condition number {condition:.3e})")]
    SingularDesign { condition: f64 },

    #[error("solver did not converge in {iterations} iterations (normalized score {score_norm:.3e})")]
    NoConvergence {
        iterations: usize,
        score_norm: f64,
        best: Box<FitResult>,
    },

    #[error("variance component(s) at the boundary: {0}; asymptotic covariance is not valid there")]
    BoundaryInference(String),

    #[error("confidence interval for {param} is undefined: fourth-moment excess {excess:.4e} <= 0")]
    DegenerateWidth { param: String, excess: f64 },

    #[error("mixture component variance is not positive for target variance {variance}")]
    InvalidMixture { variance: f64 },

    #[error("{failed} of {total} replicates failed (rate {rate:.3}, limit {limit:.3})")]
    ExcessiveFailures {
        failed: usize,
        total: usize,
        rate: f64,
        limit: f64,
    },

    #[error("function evaluation was not finite at coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
