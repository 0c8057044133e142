//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Just enough machinery to express an entire unrolled episode — environment
//! dynamics, policy evaluation, reward terms — as one differentiable graph
//! and pull gradients back through it. No GPU, no fusion, no higher-order
//! derivatives; horizons are short enough that storing the whole tape is
//! cheaper than any cleverness.

pub mod check;
mod graph;
mod rng;
mod tensor;

pub use graph::{DiffError, Gradients, Graph, Mode, Var};
pub use rng::{gumbel, Site, StreamKey, Streams};
pub use tensor::Tensor;
