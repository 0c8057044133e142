//! A trainable multi-agent particle world where a shared policy learns
//! physical actions and a discrete symbol protocol end to end.
//!
//! Agents live in a continuous 2-D arena with colored landmarks. Each agent
//! holds a private goal that may require *another* agent to act, so getting
//! the shared reward means communicating — over a discrete symbol channel
//! relaxed with Gumbel-Softmax during training, or through physical signals
//! like gaze when the channel is off. The entire episode (dynamics, policy,
//! rewards) is recorded on a reverse-mode tape and trained by gradient ascent
//! through time.

pub mod autodiff;
pub mod checkpoint;
pub mod env;
pub mod policy;

pub use autodiff::{Graph, Mode, Streams, Tensor, Var};
