//! Dense tensors, a dynamic reverse-mode tape, and Adam.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use tape::{silu, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
