use crate::cell::CellIndex;

/// Unified error type for the library.
///
/// Domain errors (bad matrices, degenerate data) are distinguished from
/// numeric breakdowns (convergence failures) and from configuration/IO
/// problems so that callers can map them to distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite: pivot {pivot:.6e} at row {row} (1-based)")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("cumulative sine product underflow at cell ({row},{col}); input matrix is numerically singular")]
    DegenerateSine { row: usize, col: usize },

    #[error("invalid permutation: {reason}")]
    InvalidPermutation { reason: String },

    #[error("eigenvalue iteration failed to converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("series is constant; the measure is undefined")]
    ConstantSeries,

    #[error("all observations tied; tau-b denominator is zero")]
    AllTied,

    #[error("no exceedances of the conditioning quantile q={q}")]
    NoExceedances { q: f64 },

    #[error("too few exceedances for the tail pair statistic: k={k}, need at least 2")]
    TooFewExceedances { k: usize },

    #[error("argument out of range: {what}")]
    OutOfRange { what: String },

    #[error("invalid argument for special function: {what}")]
    DomainError { what: String },

    #[error("hypergeometric series did not converge within {terms} terms")]
    NoConvergence { terms: usize },

    #[error("degrees-of-freedom exponent k={k} is below 1 (n too small for p)")]
    InvalidK { k: i64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("measure mismatch: {a} vs {b}")]
    MeasureMismatch { a: String, b: String },

    #[error("difference distribution is degenerate (all differences zero) at cell ({0},{1})", cell.row, cell.col)]
    DegenerateDifference { cell: CellIndex },

    #[error("measure failed on a simulated replicate at cell ({0},{1}): {reason}", cell.row, cell.col)]
    CellEstimationFailure { cell: CellIndex, reason: String },

    #[error("calibration aborted: {failed} of {total} replicates failed ({rate:.2}% > 1% tolerance)")]
    CalibrationAborted { failed: usize, total: usize, rate: f64 },

    #[error("invalid generator specification: {reason}")]
    InvalidSpec { reason: String },

    #[error("invalid cell index ({row},{col}): need 1 <= col < row <= dim")]
    InvalidCell { row: usize, col: usize },

    #[error("invalid scenario: {reason}")]
    InvalidScenario { reason: String },

    #[error("p-value of exactly zero passed to a log aggregate; apply the 1/(N+1) floor first")]
    ZeroPValue,

    #[error("malformed input: {reason}")]
    Parse { reason: String },

    #[error("artifact format error: {reason}")]
    ArtifactFormat { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the statistical domain of the inputs
    /// (as opposed to configuration, IO, or file-format problems).
    pub fn is_domain(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Parse { .. } | Error::ArtifactFormat { .. } | Error::InvalidSpec { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
