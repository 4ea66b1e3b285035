//! A compact reverse-mode autodiff engine for NCHW `f64` tensors.
//!
//! Graphs are built eagerly as operations run. [`backward`] collects
//! first-order gradients; [`grad`] with `create_graph = true` returns
//! gradients that can be differentiated again, which is what gradient
//! penalties need.

mod autograd;
mod conv;
pub mod nn;
mod ops;
pub mod optim;
mod tensor;

pub use autograd::{backward, backward_for, grad, Gradients};
pub use conv::ConvGeom;
pub use nn::{Conv2d, Init, Linear, Module, Param};
pub use optim::{Adam, AdamConfig, AdamState};
pub use tensor::{is_grad_enabled, no_grad, numel, Tensor};
