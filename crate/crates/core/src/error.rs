use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A measure violates its invariants (negative or NaN weight, wrong total mass).
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// A cost evaluator returned NaN, a negative, or an infinite value.
    #[error("cost evaluation failed at (x={x}, y={y}, t={t}): got {value}")]
    Evaluation { x: f64, y: f64, t: String, value: f64 },

    /// The x-modulus search had to go below its floor.
    #[error("modulus failure: no kappa >= {floor:e} keeps oscillation below {target:e} (last oscillation {last:e})")]
    ModulusFailure { floor: f64, target: f64, last: f64 },

    /// The dominating-pair tail never reached the requested level on the radius grid.
    #[error("tail divergence: sup tail stays at {best:e} >= {target:e} on the radius grid")]
    TailDivergence { best: f64, target: f64 },

    /// Marginals of a transport problem do not carry the same mass.
    #[error("imbalanced marginals: {0:e} vs {1:e}")]
    Imbalance(f64, f64),

    /// The exact solver exceeded its pivot budget.
    #[error("pivot budget of {0} exhausted (degenerate cycling?)")]
    CycleGuard(usize),

    /// Sinkhorn iterations stopped before reaching the marginal tolerance.
    #[error("sinkhorn did not converge in {iterations} iterations (marginal error {error:e})")]
    NonConvergence { iterations: usize, error: f64 },

    /// A parameter point is not covered by any ball of the cover.
    #[error("cover failure: {0}")]
    CoverFailure(String),

    /// Quantile map requested for a zero-mass target.
    #[error("empty target: cannot build a quantile map of zero mass")]
    EmptyTarget,

    /// Point does not belong to the requested cell.
    #[error("point {s} is outside cell {cell} = [{lo}, {hi})")]
    WrongCell { s: f64, cell: usize, lo: f64, hi: f64 },

    /// A certified quantity exceeded its budget.
    #[error("audit failure: {0}")]
    AuditFailure(String),

    /// Shape mismatch between arrays.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Bad scenario or file content.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv { path: path.into(), source }
    }
}
