use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The innovation window does not reach an index the computation needs.
    #[error("innovation window too short: missing innovation index {missing}")]
    WindowTooShort { missing: i64 },

    #[error("frozen past too shallow: depth {depth}, required depth {required}")]
    PastTooShallow { required: usize, depth: usize },

    /// Two algebraically equal evaluation routes disagreed; this points at an
    /// indexing bug rather than at bad input.
    #[error("internal mismatch in {context}: {first} vs {second}")]
    InternalMismatch {
        context: &'static str,
        first: Complex64,
        second: Complex64,
    },

    #[error(
        "search budget exhausted at stage {stage}: largest N probed {largest_n}, \
         worst theta {worst_theta:.6} (lower bound {worst_lower_bound:.4} < target {target:.4}, threshold {threshold:.4})"
    )]
    SearchBudgetExhausted {
        stage: usize,
        largest_n: usize,
        worst_theta: f64,
        worst_lower_bound: f64,
        target: f64,
        threshold: f64,
    },

    #[error("empty sample")]
    EmptySample,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// Affine type matching is ill-posed when the reference sample is constant.
    #[error("degenerate reference sample (standard deviation {std:e})")]
    DegenerateSample { std: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
