//! Dense tensors, reverse-mode autodiff, Adam and seeded randomness.

pub mod adam;
pub mod graph;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use params::ParameterStore;
pub use rng::{RngStream, RNG_ALGORITHM};
pub use scalar::Scalar;
pub use tensor::Tensor;
