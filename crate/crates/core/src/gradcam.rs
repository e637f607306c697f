//! Gradient-weighted class activation maps.
//!
//! For a target class `c` the neuron-importance weight of feature map `k` is
//! the spatial mean of `∂y^c/∂A^k_ij`, where `y^c` is the pre-sigmoid logit.
//! The localisation map is `ReLU(Σ_k α_k A^k)`, which is then upsampled to the
//! image size, min-max normalized and optionally blended over the image.

use thiserror::Error;

use crate::imaging::transform::resample_bilinear;
use crate::imaging::{Image, ImageError};
use crate::model::{ModelError, ModelGraph};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Feature maps of the designated layer and `∂y^c/∂A^k_ij` for one input,
/// computed with dropout in inference mode.
#[derive(Debug, Clone)]
pub struct FeatureGradients {
    pub class: usize,
    pub scores: Tensor,
    pub logits: Tensor,
    pub features: Tensor,
    pub gradients: Tensor,
}

pub fn feature_gradients(model: &ModelGraph, x: &Tensor, class: usize) -> Result<FeatureGradients, GradCamError> {
    model.validate_class(class)?;
    let pass = model.forward_with_features(x, false, 0)?;
    let mut seed = Tensor::zeros(&[model.num_classes()]);
    seed.data_mut()[class] = 1.0;
    let mut grads = pass.tape.backward_from(pass.logits, &seed)?;
    Ok(FeatureGradients {
        class,
        scores: pass.scores().clone(),
        logits: pass.logits().clone(),
        features: pass.features().clone(),
        gradients: grads.take(pass.features),
    })
}

/// `α_k = (1/Z) Σ_ij grads[k, i, j]` with `Z = H·W`.
pub fn neuron_importance(grads: &Tensor) -> Result<Tensor, GradCamError> {
    if grads.rank() != 3 {
        return Err(GradCamError::Dimension(format!(
            "gradients must be [K, H, W], got {:?}",
            grads.shape()
        )));
    }
    let z = grads.shape()[1] * grads.shape()[2];
    let alpha = grads
        .data()
        .chunks_exact(z)
        .map(|g| g.iter().sum::<f64>() / z as f64)
        .collect();
    Ok(Tensor::from_vec(alpha))
}

/// `ReLU(Σ_k α_k A^k)` as an `[H, W]` map.
pub fn gradcam_map(alpha: &Tensor, features: &Tensor) -> Result<Tensor, GradCamError> {
    if features.rank() != 3 || alpha.len() != features.shape()[0] {
        return Err(GradCamError::Dimension(format!(
            "{} weights for feature maps {:?}",
            alpha.len(),
            features.shape()
        )));
    }
    let (h, w) = (features.shape()[1], features.shape()[2]);
    let mut acc = vec![0.0; h * w];
    for (&a, plane) in alpha.data().iter().zip(features.data().chunks_exact(h * w)) {
        for (o, &f) in acc.iter_mut().zip(plane) {
            *o += a * f;
        }
    }
    for v in &mut acc {
        *v = v.max(0.0);
    }
    Ok(Tensor::new(vec![h, w], acc)?)
}

/// A localisation map in `[0, 1]` at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    source_class: usize,
}

impl Heatmap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_class(&self) -> usize {
        self.source_class
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// `(row, column)` of the largest value, first in scan order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Grayscale rendering, `round(255·v)`.
    pub fn to_image(&self) -> Image {
        let px = self.values.iter().map(|v| (v * 255.0).round() as u8).collect();
        Image::new(self.height, self.width, 1, px).expect("heatmap dimensions are positive")
    }
}

/// Bilinear upsampling (same convention as image resizing) followed by
/// min-max normalization. A constant map normalizes to all zeros.
pub fn upsample_and_normalize(map: &Tensor, out_h: usize, out_w: usize, class: usize) -> Result<Heatmap, GradCamError> {
    if map.rank() != 2 {
        return Err(GradCamError::Dimension(format!("map must be [H, W], got {:?}", map.shape())));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    if out_h < h || out_w < w {
        return Err(GradCamError::InvalidArgument(format!(
            "target {out_h}x{out_w} is smaller than the map {h}x{w}"
        )));
    }
    let mut values = resample_bilinear(map.data(), h, w, out_h, out_w);
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        let span = hi - lo;
        for v in &mut values {
            *v = ((*v - lo) / span).clamp(0.0, 1.0);
        }
    } else {
        values.fill(0.0);
    }
    Ok(Heatmap {
        height: out_h,
        width: out_w,
        values,
        source_class: class,
    })
}

/// Blue → green on `[0, 0.5]`, green → red on `[0.5, 1]`.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        let t = v / 0.5;
        [0.0, 255.0 * t, 255.0 * (1.0 - t)]
    } else {
        let t = (v - 0.5) / 0.5;
        [255.0 * t, 255.0 * (1.0 - t), 0.0]
    }
}

pub const DEFAULT_BLEND: f64 = 0.4;

/// `round((1−blend)·pixel + blend·colormap(v))`; grayscale inputs are
/// expanded to RGB first.
pub fn overlay(img: &Image, hm: &Heatmap, blend: f64) -> Result<Image, GradCamError> {
    if !(0.0..=1.0).contains(&blend) {
        return Err(GradCamError::InvalidArgument(format!("blend {blend} outside [0, 1]")));
    }
    if (img.height(), img.width()) != (hm.height, hm.width) {
        return Err(GradCamError::Dimension(format!(
            "heatmap {}x{} vs image {}x{}",
            hm.height,
            hm.width,
            img.height(),
            img.width()
        )));
    }
    let mut out = img.to_rgb();
    for (px, &v) in out.pixels_mut().chunks_exact_mut(3).zip(&hm.values) {
        let color = colormap(v);
        for (c, col) in px.iter_mut().zip(color) {
            *c = ((1.0 - blend) * *c as f64 + blend * col).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// Full explanation for one input.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub class: usize,
    pub scores: Tensor,
    pub alpha: Tensor,
    /// Pre-normalization map at feature resolution.
    pub map: Tensor,
    pub heatmap: Heatmap,
}

/// Grad-CAM for `class`, or for the highest-scoring class when `None`.
pub fn explain(model: &ModelGraph, x: &Tensor, class: Option<usize>, out_h: usize, out_w: usize) -> Result<Explanation, GradCamError> {
    let class = match class {
        Some(c) => c,
        None => model.predict(x)?.argmax(),
    };
    let fg = feature_gradients(model, x, class)?;
    let alpha = neuron_importance(&fg.gradients)?;
    let map = gradcam_map(&alpha, &fg.features)?;
    let heatmap = upsample_and_normalize(&map, out_h, out_w, class)?;
    Ok(Explanation {
        class,
        scores: fg.scores,
        alpha,
        map,
        heatmap,
    })
}
