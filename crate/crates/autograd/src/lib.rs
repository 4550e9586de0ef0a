//! Reverse-mode automatic differentiation for `f64` tensors.
//!
//! A [`Graph`] records a tape of tensor operations as they run forward.
//! Calling [`Graph::backward`] on a scalar output walks the tape in reverse
//! and accumulates gradients into every leaf. Everything is dynamic-rank
//! (`ArrayD<f64>`), single-threaded, and deterministic: the same inputs
//! always produce bit-identical values and gradients.
//!
//! The op set is the minimum needed for windowed-attention encoders,
//! convolutional encoder-decoders, and convolutional recurrence: dense and
//! batched matrix products, 2D (transposed) convolution and max-pooling,
//! layer/group normalization, softmax, gather/concat/pad reshaping, and the
//! usual pointwise nonlinearities.

mod graph;
mod ops;

pub mod gradcheck;

pub use graph::{Arr, Graph, Tid};
pub use ops::shape::GatherPlan;
