//! Numerical foundation: dense matrices, seeded randomness, small-matrix
//! linear algebra, and the reverse-mode differentiation tape.

pub mod autodiff;
pub mod linalg;
pub mod matrix;
pub mod rng;

pub use autodiff::{finite_difference_oracle, DiffRecord, Gradients, NodeId};
pub use matrix::{column_softmax, dot, norm, outer_product, relative_l2_error, squared_norm, DenseMatrix};
pub use rng::{stream_id, SeededRng, RNG_ALGORITHM};
