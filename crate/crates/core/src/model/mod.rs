//! The sequential CNN: layer specs, forward passes that expose the
//! penultimate feature maps, and weight serialization.

mod graph;
mod spec;
pub mod weights;

pub use graph::{ForwardPass, Layer, ModelError, ModelGraph, Parameter, Shape};
pub use spec::{LayerSpec, ModelConfig};
pub use weights::{load_weights, save_weights, WeightsError};
