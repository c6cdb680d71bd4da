//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoadError>;

/// Everything that can go wrong in the testbed.
#[derive(Debug, Error)]
pub enum CoadError {
    /// A nonnegative vector summed to zero and cannot be normalized.
    #[error("degenerate distribution: input sums to zero")]
    DegenerateDistribution,

    /// A logit vector contained NaN or infinity where finite values are required.
    #[error("non-finite logit at index {index}: {value}")]
    NonFiniteLogit { index: usize, value: f64 },

    /// Vector lengths disagree with what the operation expects.
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A context was empty where at least a BOS token is required.
    #[error("empty context: decoding requires at least a BOS token")]
    EmptyContext,

    /// Exact marginalization over 2^C object vectors was requested for too large a C.
    #[error("enumeration limit: exact marginalization supports at most {max} categories, got {got}")]
    EnumerationLimit { max: usize, got: usize },

    /// Contrastive fusion produced no positive mass anywhere.
    #[error("degenerate fusion at alpha={alpha}: fused vector has no positive mass")]
    DegenerateFusion { alpha: f64 },

    /// A presence probe found zero mass on both YES and NO.
    #[error("degenerate probe for category {category}: P(yes) + P(no) = 0")]
    DegenerateProbe { category: usize },

    /// Training was asked to fit an empty corpus.
    #[error("empty corpus: finetuning requires at least one caption record")]
    EmptyCorpus,

    /// A next-token source failed during generation; the step index is attached.
    #[error("generation failed at step {step}: {source}")]
    GenerationStep {
        step: usize,
        #[source]
        source: Box<CoadError>,
    },

    /// Invalid configuration (maps to CLI exit code 1).
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem or serialization failure while persisting run outputs.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoadError {
    /// Whether the error is a configuration problem rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, CoadError::Config(_))
    }
}
