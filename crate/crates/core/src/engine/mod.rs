//! Tensors and a reverse-mode tape.
//!
//! Values live on a [`Tape`]; ops return [`Var`] handles. `backward` walks the
//! recorded nodes in exact reverse order, so gradients are reproducible bit for
//! bit given the same inputs and op sequence.

mod conv;
pub mod gradcheck;
mod tape;
mod tensor;

pub use conv::with_wide_accumulation;
pub use tape::{sigmoid, softplus, Activation, Ewise, Resample, Tape, Var};
pub use tensor::{reflect_index, Tensor};
