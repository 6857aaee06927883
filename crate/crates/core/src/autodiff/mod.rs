//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference
//! gradient checker. Sized for subgraph batches: everything is `f64` and
//! single-threaded, so identical inputs give bit-identical outputs.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, GradCheckReport, DENOMINATOR_FLOOR};
pub use tape::{sigmoid, Gradients, Segments, Tape, Var};
pub use tensor::Tensor;
