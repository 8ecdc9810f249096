//! Crate-wide error type.
//!
//! Every public operation that can fail returns [`Result`]. Numerical
//! failures (overflow, divergence, singular systems) are distinguished from
//! usage errors (shape mismatches, bad parameters) so that callers — the CLI
//! in particular — can map them to different exit codes.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

/// All failure modes of the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    /// Two operands (or an operand and an expectation) disagree on shape.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// An operation produced (or was handed) a NaN or infinity.
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },

    /// A softmax-kernel or feature-map exponent left the representable
    /// range of f64 (overflow above, or underflow to exactly zero below,
    /// which would break the strict-positivity guarantee).
    #[error("kernel exponent {exponent} outside the representable f64 range in {op}")]
    KernelRange { op: &'static str, exponent: f64 },

    /// Attention was asked to attend over zero tokens.
    #[error("empty context: attention needs at least one token")]
    EmptyContext,

    /// A parameter value violates a documented precondition.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A normalization step hit a zero (or near-zero) divisor, e.g. a
    /// regularized self-attention column whose entries cancel exactly.
    #[error("degenerate normalization in {op}: divisor {divisor}")]
    DegenerateNormalization { op: &'static str, divisor: f64 },

    /// A linear system could not be solved (rank-deficient or indefinite
    /// beyond the factorization's tolerance).
    #[error("singular system in {op}: {detail}")]
    SingularSystem { op: &'static str, detail: String },

    /// Training produced a non-finite loss; the step index is reported so
    /// runs can be reproduced up to the failure.
    #[error("training diverged at step {step} (epoch {epoch}): loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    /// The requested operation does not apply to the given variant, e.g.
    /// an unbiasedness probe of the deterministic elu+1 map.
    #[error("unsupported variant for {op}: {detail}")]
    UnsupportedVariant { op: &'static str, detail: String },

    /// The empirical-minimizer construction hit an exactly-zero gradient
    /// accumulation, leaving the minimizer direction undefined.
    #[error("degenerate empirical minimizer: accumulated gram matrix is exactly zero")]
    DegenerateMinimizer,

    /// Backward pass was asked to differentiate a non-scalar node.
    #[error("loss node must be 1x1, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },
}

impl CoreError {
    /// True for failures of the mathematics rather than of the call: the
    /// CLI maps these to its "numerical failure" exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CoreError::NonFinite { .. }
                | CoreError::KernelRange { .. }
                | CoreError::DegenerateNormalization { .. }
                | CoreError::SingularSystem { .. }
                | CoreError::Divergence { .. }
                | CoreError::DegenerateMinimizer
        )
    }
}
