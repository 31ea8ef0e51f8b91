//! Dense tensors, reverse-mode differentiation and a finite-difference oracle.

pub mod dd;
pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_gradient, max_relative_error, worst_entry, WorstEntry, DEFAULT_STEP};
pub use tape::{BatchStats, EwOp, Gradients, Mode, NormRef, Tape, Var};
pub use tensor::{DType, Scalar, Storable, Tensor};
