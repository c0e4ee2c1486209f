use thiserror::Error;

use crate::inner::InnerSolution;
use crate::recovery::RecoveryResult;

/// Errors raised by the certifiers, solvers and oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid block structure: n = {n}, p = {p}")]
    InvalidStructure { n: usize, p: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("column {column} has norm {norm:e}, below the normalization floor")]
    ZeroColumn { column: usize, norm: f64 },

    #[error("matrix has numerical rank {rank}, fewer than its {rows} rows")]
    RankDeficient { rank: usize, rows: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("recovery solver did not converge after {iterations} iterations (primal residual {primal_residual:e}, gap {gap:e})")]
    RecoveryNotConverged {
        iterations: usize,
        primal_residual: f64,
        gap: f64,
        best: Box<RecoveryResult>,
    },

    #[error("problem is infeasible: least-squares residual {residual:e} exceeds radius {radius:e}")]
    Infeasible { residual: f64, radius: f64 },

    #[error("inner solver did not reach its gap tolerance after {} iterations (gap {:e})", .0.iterations, .0.gap)]
    InnerNotConverged(Box<InnerSolution>),

    #[error("invalid omega query: {0}")]
    InvalidQuery(String),

    #[error("fixed-point iteration hit the iteration limit ({0})")]
    MaxIterations(usize),

    #[error("could not bracket the fixed point after {retries} expansions (last bracket [{lo}, {hi}])")]
    BracketFailure { retries: usize, lo: f64, hi: f64 },

    #[error("goodness measure lower bound {0} is not positive")]
    NonPositiveOmega(f64),

    #[error("invalid block sparsity k = {k} for p = {p}")]
    InvalidK { k: usize, p: usize },

    #[error("instance too large for the brute-force oracle: {0}")]
    TooLarge(String),

    #[error("kernel dimension {0} exceeds the oracle cap")]
    KernelTooLarge(usize),

    #[error("oracle bisection found no sign change in [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
