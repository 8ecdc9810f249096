//! Numerical laboratory for the equivalence between in-context-learning
//! inference by softmax/kernelized attention and one-step gradient descent
//! on a dual model, together with contrastive-learning-inspired attention
//! modifications and the experiments that probe them.
//!
//! Layering (bottom up):
//!
//! * [`numerics`] — dense f64 matrices, seeded randomness, small-matrix
//!   linear algebra, a reverse-mode differentiation tape with a
//!   finite-difference oracle;
//! * [`kernel`] — softmax-kernel feature maps (positive random features and
//!   elu+1) and attention-matrix approximation measurement;
//! * [`attention`] — exact and kernelized attention, the FFN layer with its
//!   masked-linear form, stacked prefix attention, and the modified
//!   attention variants (regularized, augmented, negative-sample, ridge);
//! * [`dual`] — construction and gradient-descent training of the dual
//!   model whose test prediction reproduces attention's in-context output;
//! * [`generalization`] — the generalization-bound surrogate and an
//!   empirical generalization-gap estimate;
//! * [`harness`] — synthetic tasks, deterministic SGD training, and the
//!   canned experiments the CLI exposes.

pub mod attention;
pub mod dual;
pub mod error;
pub mod generalization;
pub mod harness;
pub mod kernel;
pub mod numerics;

pub use attention::{
    AttentionWeights, Augmentation, ContextLayout, FfnWeights, KernelEval, ModificationConfig,
};
pub use dual::{DualDataset, DualModel, EquivalenceReport, UpdateMode};
pub use error::{CoreError, Result};
pub use generalization::BoundInputs;
pub use harness::{TaskKind, TaskSpec, TokenBatch, TrainConfig};
pub use kernel::FeatureMapSpec;
pub use numerics::{DenseMatrix, SeededRng};
