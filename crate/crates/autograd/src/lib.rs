//! Reverse-mode automatic differentiation for the small convolutional
//! networks used by `vaesr-core`.
//!
//! Graphs are built eagerly: every operation on a [`Var`] computes its value
//! immediately and records its inputs. [`Var::backward`] walks the recorded
//! graph in reverse topological order. Everything runs on one thread, so the
//! same inputs always produce bit-identical values and gradients.

mod float;
mod kernels;
mod tensor;
mod var;

pub use float::Float;
pub use kernels::ConvGeom;
pub use tensor::Tensor;
pub use var::{Gradients, Var};
