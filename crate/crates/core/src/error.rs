use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("record {index}: covariate dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("record {index}: outcome observed without selection")]
    OutcomeWithoutSelection { index: usize },

    #[error("record {index}: field `{field}` must be 0 or 1, got {value}")]
    NonBinary {
        index: usize,
        field: &'static str,
        value: f64,
    },

    #[error("record {index}: field `{field}` is not finite")]
    NonFinite { index: usize, field: &'static str },

    #[error("both selection classes must be present (selected {selected} of {n})")]
    DegenerateSelection { selected: usize, n: usize },

    #[error("empty prediction bin")]
    EmptyPredictionBin,

    #[error("invalid fold count K={k} for n={n} (need 2 <= K <= n)")]
    InvalidFolds { k: usize, n: usize },

    #[error("{0} required")]
    MissingColumn(&'static str),

    #[error("empty training stratum: {0}")]
    EmptyStratum(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("estimand `{kind}` is {found}, expected {expected}")]
    EstimandClass {
        kind: String,
        found: &'static str,
        expected: &'static str,
    },

    #[error("denominator condition violated: no candidate exceeds tolerance {tol}")]
    DenominatorInfeasible { tol: f64 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("invalid utilities: {0}")]
    Utility(String),

    #[error("{0} requires simulation ground truth")]
    NoTruth(&'static str),

    #[error("{failed} of {total} replications failed; last error: {last}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        last: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
