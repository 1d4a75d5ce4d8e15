//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Graph`] as they execute. Calling
//! [`Graph::backward`] on a scalar produces [`Gradients`] for every leaf that
//! was created with gradient tracking. Everything runs single-threaded, so
//! results are bit-reproducible for a fixed sequence of operations.

pub mod graph;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{CustomOp, Gradients, Graph, Var};
pub use nn::{Activation, Conv2d, Init, Linear, Mlp};
pub use optim::{Adam, OptimError};
pub use params::{Binding, ParamId, ParamStore};
pub use tensor::Tensor;
