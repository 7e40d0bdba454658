//! Minimal reverse-mode automatic differentiation: exactly the operations the
//! dialogue model needs, in 64-bit floats.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{softmax_tensor, Axis, Graph, Var};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::ParamStore;
pub use tensor::Tensor;
