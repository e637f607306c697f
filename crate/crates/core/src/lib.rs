//! Diabetic-retinopathy style fundus classification with Grad-CAM
//! localisation maps, built from first principles.
//!
//! The pipeline: CLAHE preprocessing ([`imaging`]), a small sequential CNN
//! with a GAP → dropout → dense → sigmoid head ([`model`]) trained with
//! class-weighted one-vs-all cross-entropy ([`training`]), Grad-CAM maps and
//! overlays ([`gradcam`]), and accuracy / per-class AUC reporting
//! ([`evaluation`]). [`dataset`] handles label files, stratified splits and a
//! synthetic lesion generator with ground-truth boxes.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod fsutil;
pub mod gradcam;
pub mod imaging;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, ValueId};
pub use imaging::{Histogram, Image, ImageError};
pub use tensor::{Tensor, TensorError};
