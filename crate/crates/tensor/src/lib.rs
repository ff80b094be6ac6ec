//! Dense CPU tensors with tape-based reverse-mode differentiation.
//!
//! Values are plain [`Tensor`]s. Differentiable computations are recorded on
//! a [`Graph`]; parameters live in a [`ParamStore`] that the graph reads
//! from, and [`Graph::backward`] hands back a [`Gradients`] bundle that is
//! applied to the store afterwards. The engine is generic over [`Real`] so the
//! same model code runs in `f32` for training and `f64` for gradient checks.

mod backward;
mod error;
pub mod gradcheck;
mod graph;
pub mod init;
mod kernels;
pub mod nn;
mod ops;
pub mod optim;
pub mod parallel;
mod params;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Mode, Var};
pub use params::{BufferId, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
