//! Dense 2-D tensors with a recorded computation graph and reverse-mode
//! gradients.
//!
//! Every value on a [`Tape`] is a row-major `rows × cols` array; vectors are
//! `1 × n`. Operations append a node holding the output and enough context to
//! run its backward rule, so node order is always topological. The tape is
//! generic over [`Real`], so the same graph code runs at 64-bit for gradient
//! checks and at 32-bit for training.

mod dd;
mod feast;
pub mod gradcheck;
mod matrix;
mod real;
mod tape;

pub use dd::DoubleDouble;
pub use gradcheck::{gradient_check, gradient_check_extended, GradCheckReport, Objective};
pub use matrix::Matrix;
pub use real::{gemm, Real};
pub use tape::{FeastInputs, Gradients, Tape, Var};
