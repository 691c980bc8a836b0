//! A small reverse-mode differentiation engine over 2-D `f64` tensors, with
//! the parameter store, optimiser and checkpoint format used by the MDN.

mod graph;
mod params;
mod tensor;

pub use graph::{gelu, head_transform, softmax_in_place, softplus, Gradients, Graph, Var};
pub use params::{Adam, Checkpoint, Init, NamedParam, ParamId, ParamStore, RngState, CHECKPOINT_VERSION};
pub use tensor::Tensor;
