//! Class weighting, the weighted one-vs-all loss, SGD, and the training loop.

mod loss;
mod optim;
mod trainer;

use thiserror::Error;

use crate::imaging::ImageError;
use crate::model::ModelError;
use crate::tensor::TensorError;

pub use loss::{
    class_weights, unweighted_loss, weighted_loss, weighted_loss_logit_grad, weighted_loss_score_grad, ClassWeights,
    SCORE_EPSILON,
};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use trainer::{infer_scores, prepare_input, train, EpochStats, Example, TrainConfig, TrainLog};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {0} has no training samples")]
    MissingClass(usize),
    #[error("sample {index}: label {label} out of range for {num_classes} classes")]
    InvalidLabel {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
