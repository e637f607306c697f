use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::fsutil;
use crate::imaging::{flip, normalize, resize_bilinear, FlipAxis, Image, Normalization};
use crate::model::ModelGraph;
use crate::rng;
use crate::tensor::Tensor;
use crate::training::{class_weights, weighted_loss, weighted_loss_logit_grad, ClassWeights, Optimizer, OptimizerKind, TrainError};

// stream tags for seed derivation
const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;
const DROPOUT: u64 = 3;

#[derive(Debug, Clone)]
pub struct Example {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// SGD only.
    pub momentum: f64,
    pub seed: u64,
    pub hflip: bool,
    pub vflip: bool,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 16,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            hflip: true,
            vflip: true,
            normalization: Normalization::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        Optimizer::new(self.optimizer, self.learning_rate, self.momentum)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of training samples whose train-mode argmax matched the
    /// label during the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn write_csv_to(&self, w: &mut dyn Write) -> std::io::Result<()> {
        writeln!(w, "epoch,mean_loss,train_accuracy")?;
        for e in &self.epochs {
            writeln!(w, "{},{:.6},{:.6}", e.epoch, e.mean_loss, e.train_accuracy)?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        fsutil::write_atomic_with(path, |w| self.write_csv_to(w))
    }
}

/// Converts an image into the model's input tensor: gray is expanded to
/// RGB when the model wants three channels, the raster is resized to the
/// model input size, then normalized.
pub fn prepare_input(img: &Image, model: &ModelGraph, norm: &Normalization) -> Result<Tensor, TrainError> {
    let [c, h, w] = model.input_shape();
    let img = match (img.channels(), c) {
        (1, 3) => img.to_rgb(),
        (a, b) if a == b => img.clone(),
        (a, b) => {
            return Err(TrainError::InvalidConfig(format!(
                "{a}-channel image for a {b}-channel model"
            )))
        }
    };
    let img = if (img.height(), img.width()) == (h, w) {
        img
    } else {
        resize_bilinear(&img, h, w)?
    };
    Ok(normalize(&img, norm)?)
}

/// Inference-mode scores for every example, in input order.
pub fn infer_scores(model: &ModelGraph, images: &[Image], norm: &Normalization) -> Result<Vec<Tensor>, TrainError> {
    images
        .par_iter()
        .map(|img| Ok(model.predict(&prepare_input(img, model, norm)?)?))
        .collect()
}

struct SampleResult {
    loss: f64,
    correct: bool,
    grads: Vec<Tensor>,
}

fn sample_step(
    model: &ModelGraph,
    example: &Example,
    index: usize,
    epoch: usize,
    cfg: &TrainConfig,
    weights: &ClassWeights,
) -> Result<SampleResult, TrainError> {
    let mut aug = rng::stream(cfg.seed, &[AUGMENT, epoch as u64, index as u64]);
    let do_h = aug.gen_bool(0.5);
    let do_v = aug.gen_bool(0.5);
    let mut img = example.image.clone();
    if cfg.hflip && do_h {
        img = flip(&img, FlipAxis::Horizontal);
    }
    if cfg.vflip && do_v {
        img = flip(&img, FlipAxis::Vertical);
    }
    let x = prepare_input(&img, model, &cfg.normalization)?;
    let dropout_seed = rng::derive_seed(cfg.seed, &[DROPOUT, epoch as u64, index as u64]);
    let pass = model.forward_with_features(&x, true, dropout_seed)?;
    let scores = pass.scores();
    let loss = weighted_loss(scores, example.label, weights)?;
    let correct = scores.argmax() == example.label;
    let seed = weighted_loss_logit_grad(scores, example.label, weights)?;
    let mut g = pass.tape.backward_from(pass.logits, &seed)?;
    let grads = pass
        .params
        .iter()
        .map(|id| g.take(id.expect("full forward pass records every parameter")))
        .collect();
    Ok(SampleResult { loss, correct, grads })
}

/// Trains `model` in place with mini-batch SGD on the class-weighted loss.
///
/// Each epoch visits the data in a seeded random order. Per-sample flips,
/// dropout masks and the shuffle are all derived from `cfg.seed`, and
/// per-sample gradients are summed in batch order, so the result does not
/// depend on the number of worker threads.
pub fn train(model: &mut ModelGraph, data: &[Example], cfg: &TrainConfig) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let k = model.num_classes();
    let mut counts = vec![0usize; k];
    for (index, ex) in data.iter().enumerate() {
        if ex.label >= k {
            return Err(TrainError::InvalidLabel {
                index,
                label: ex.label,
                num_classes: k,
            });
        }
        counts[ex.label] += 1;
    }
    let weights = class_weights(&counts)?;
    // fail on unusable images before the first step
    prepare_input(&data[0].image, model, &cfg.normalization)?;

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.momentum)?;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<SampleResult> = batch
                .par_iter()
                .map(|&i| sample_step(model, &data[i], i, epoch, cfg, &weights))
                .collect::<Result<_, _>>()?;
            let mut total: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            for r in &results {
                loss_sum += r.loss;
                correct += usize::from(r.correct);
                for (t, g) in total.iter_mut().zip(&r.grads) {
                    t.add_assign(g)?;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mean: Vec<Tensor> = total.iter().map(|t| t.scale(scale)).collect();
            opt.step(model.params_mut().iter_mut().map(|p| &mut p.value), &mean)?;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        };
        log::info!(
            "epoch {:>3}: loss {:.4}, train accuracy {:.4}",
            stats.epoch,
            stats.mean_loss,
            stats.train_accuracy
        );
        log.epochs.push(stats);
    }
    Ok(log)
}
