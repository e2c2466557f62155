//! Small dense-tensor library with a reverse-mode autodiff tape.
//!
//! Everything is `f64`. A [`Graph`] is built fresh for every loss evaluation;
//! inputs enter as [`Graph::leaf`] (trainable) or [`Graph::constant`], and
//! [`Graph::backward`] returns gradients for the leaves.

mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
