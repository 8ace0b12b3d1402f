//! Reverse-mode automatic differentiation on a per-step tape, with an Adam
//! optimizer and a named parameter store.

mod graph;
pub mod gradcheck;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{decode_checkpoint, encode_checkpoint, Bound, Checkpoint, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::{dot, norm};

#[cfg(test)]
mod tests;
