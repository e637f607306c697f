use rand::Rng;
use thiserror::Error;

use crate::autodiff::{ops::conv_output_len, Tape, ValueId};
use crate::config::ConfigError;
use crate::model::spec::{LayerSpec, ModelConfig};
use crate::rng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer {index} ({kind}): {reason}")]
    Build {
        index: usize,
        kind: &'static str,
        reason: String,
    },
    #[error("model structure: {0}")]
    Structure(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("class index {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error("input shape {found:?} does not match model input {expected:?}")]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial([usize; 3]),
    Flat(usize),
}

impl Shape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Spatial(s) => s.to_vec(),
            Shape::Flat(n) => vec![n],
        }
    }
}

/// A validated layer together with its parameter slots and output shape.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub output: Shape,
    /// Indices into the model's parameter list: `[weight, bias]` for conv
    /// and dense layers, empty otherwise.
    pub params: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// A sequential CNN with a designated feature layer (`A^k`) feeding a
/// global-average-pooling head.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    config: ModelConfig,
    layers: Vec<Layer>,
    params: Vec<Parameter>,
    feature_layer: usize,
}

/// Everything recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub tape: Tape,
    /// The value the pass started from (the image, or the feature maps for
    /// a head-only pass).
    pub input: ValueId,
    /// One id per model parameter, in parameter-list order. Parameters of
    /// layers that were not executed are absent.
    pub params: Vec<Option<ValueId>>,
    pub features: ValueId,
    /// Output of the GAP layer.
    pub pooled: ValueId,
    /// Pre-sigmoid class outputs `y^c`.
    pub logits: ValueId,
    /// Post-sigmoid class scores.
    pub scores: ValueId,
}

impl ForwardPass {
    pub fn scores(&self) -> &Tensor {
        self.tape.value(self.scores)
    }

    pub fn logits(&self) -> &Tensor {
        self.tape.value(self.logits)
    }

    pub fn features(&self) -> &Tensor {
        self.tape.value(self.features)
    }
}

fn he_uniform(shape: &[usize], fan_in: usize, seed: u64) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut rng = rng::stream(seed, &[]);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl ModelGraph {
    /// Validates `config` and initializes weights (He-uniform from
    /// `config.seed`, zero biases).
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        let [c, h, w] = config.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(ModelError::Structure(format!("input shape {c}x{h}x{w} must be positive")));
        }
        if config.num_classes == 0 {
            return Err(ModelError::Structure("num_classes must be positive".into()));
        }
        let mut shape = Shape::Spatial(config.input);
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut params = Vec::new();
        let (mut n_conv, mut n_dense) = (0, 0);
        let mut gap_at = None;

        for (index, spec) in config.layers.iter().enumerate() {
            let fail = |reason: String| ModelError::Build {
                index,
                kind: spec.kind(),
                reason,
            };
            let mut slots = Vec::new();
            let out = match (*spec, shape) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    Shape::Spatial([ci, h, w]),
                ) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(fail("channels, kernel and stride must be positive".into()));
                    }
                    let (oh, ow) = match (
                        conv_output_len(h, kernel, stride, padding),
                        conv_output_len(w, kernel, stride, padding),
                    ) {
                        (Some(oh), Some(ow)) => (oh, ow),
                        _ => return Err(fail(format!("kernel {kernel} exceeds padded input {h}x{w}"))),
                    };
                    n_conv += 1;
                    let fan_in = ci * kernel * kernel;
                    let wshape = [out_channels, ci, kernel, kernel];
                    slots.push(params.len());
                    params.push(Parameter {
                        name: format!("conv{n_conv}.weight"),
                        value: he_uniform(&wshape, fan_in, rng::derive_seed(config.seed, &[params.len() as u64])),
                    });
                    slots.push(params.len());
                    params.push(Parameter {
                        name: format!("conv{n_conv}.bias"),
                        value: Tensor::zeros(&[out_channels]),
                    });
                    Shape::Spatial([out_channels, oh, ow])
                }
                (LayerSpec::MaxPool, Shape::Spatial([c, h, w])) => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(fail(format!("input {h}x{w} is not even")));
                    }
                    Shape::Spatial([c, h / 2, w / 2])
                }
                (LayerSpec::Gap, Shape::Spatial([c, _, _])) => {
                    if gap_at.is_some() {
                        return Err(fail("only one GAP layer is allowed".into()));
                    }
                    if n_conv == 0 {
                        return Err(fail("GAP must follow a convolutional layer".into()));
                    }
                    gap_at = Some(index);
                    Shape::Flat(c)
                }
                (LayerSpec::Dense { units }, Shape::Flat(n)) => {
                    let m = units.unwrap_or(config.num_classes);
                    if m == 0 {
                        return Err(fail("dense width must be positive".into()));
                    }
                    n_dense += 1;
                    slots.push(params.len());
                    params.push(Parameter {
                        name: format!("dense{n_dense}.weight"),
                        value: he_uniform(&[m, n], n, rng::derive_seed(config.seed, &[params.len() as u64])),
                    });
                    slots.push(params.len());
                    params.push(Parameter {
                        name: format!("dense{n_dense}.bias"),
                        value: Tensor::zeros(&[m]),
                    });
                    Shape::Flat(m)
                }
                (LayerSpec::Dropout { p }, s) => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(fail(format!("p = {p} outside [0, 1)")));
                    }
                    s
                }
                (LayerSpec::Relu | LayerSpec::Sigmoid, s) => s,
                (LayerSpec::Conv { .. } | LayerSpec::MaxPool | LayerSpec::Gap, Shape::Flat(_)) => {
                    return Err(fail("expects a spatial [C, H, W] input".into()));
                }
                (LayerSpec::Dense { .. }, Shape::Spatial(_)) => {
                    return Err(fail("expects a flat input; add a GAP layer first".into()));
                }
            };
            shape = out;
            layers.push(Layer {
                spec: *spec,
                output: out,
                params: slots,
            });
        }

        let gap_at = gap_at.ok_or_else(|| ModelError::Structure("model has no GAP layer".into()))?;
        match layers.last() {
            Some(Layer {
                spec: LayerSpec::Sigmoid,
                output: Shape::Flat(n),
                ..
            }) if *n == config.num_classes => {}
            _ => {
                return Err(ModelError::Structure(format!(
                    "the last layer must be a sigmoid over {} class outputs",
                    config.num_classes
                )))
            }
        }
        Ok(ModelGraph {
            config,
            layers,
            params,
            feature_layer: gap_at - 1,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.config.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Index of the layer whose activations are the Grad-CAM feature maps.
    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        match self.layers[self.feature_layer].output {
            Shape::Spatial(s) => s,
            Shape::Flat(_) => unreachable!("feature layer precedes GAP and is spatial"),
        }
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Weight of the final dense layer, `[num_classes, K]`.
    pub fn head_weight(&self) -> &Tensor {
        let layer = self
            .layers
            .iter()
            .rev()
            .find(|l| matches!(l.spec, LayerSpec::Dense { .. }))
            .expect("validated model has a dense head");
        &self.params[layer.params[0]].value
    }

    /// Full forward pass. In train mode, dropout masks derive from `seed`
    /// and the layer index.
    pub fn forward_with_features(&self, x: &Tensor, train_mode: bool, seed: u64) -> Result<ForwardPass, ModelError> {
        let expected = self.config.input.to_vec();
        if x.shape() != expected.as_slice() {
            return Err(ModelError::InputShape {
                expected,
                found: x.shape().to_vec(),
            });
        }
        self.run_from(0, x, train_mode, seed)
    }

    /// Runs only the layers after the feature layer, starting from the given
    /// feature maps.
    pub fn forward_head(&self, features: &Tensor, train_mode: bool, seed: u64) -> Result<ForwardPass, ModelError> {
        let expected = self.feature_shape().to_vec();
        if features.shape() != expected.as_slice() {
            return Err(ModelError::InputShape {
                expected,
                found: features.shape().to_vec(),
            });
        }
        self.run_from(self.feature_layer + 1, features, train_mode, seed)
    }

    /// Post-sigmoid scores in inference mode.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(self.forward_with_features(x, false, 0)?.scores().clone())
    }

    fn run_from(&self, start: usize, x: &Tensor, train_mode: bool, seed: u64) -> Result<ForwardPass, ModelError> {
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone());
        let mut param_ids = vec![None; self.params.len()];
        let mut cur = input;
        let mut features = if start > self.feature_layer { Some(input) } else { None };
        let last = self.layers.len() - 1;
        let mut logits = None;
        let mut pooled = None;

        for (index, layer) in self.layers.iter().enumerate().skip(start) {
            let mut param = |slot: usize, tape: &mut Tape| {
                let pid = layer.params[slot];
                let id = tape.leaf(self.params[pid].value.clone());
                param_ids[pid] = Some(id);
                id
            };
            if index == last {
                logits = Some(cur);
            }
            cur = match layer.spec {
                LayerSpec::Conv { stride, padding, .. } => {
                    let w = param(0, &mut tape);
                    let b = param(1, &mut tape);
                    tape.conv2d(cur, w, b, stride, padding)?
                }
                LayerSpec::Dense { .. } => {
                    let w = param(0, &mut tape);
                    let b = param(1, &mut tape);
                    tape.dense(cur, w, b)?
                }
                LayerSpec::Relu => tape.relu(cur),
                LayerSpec::Sigmoid => tape.sigmoid(cur),
                LayerSpec::MaxPool => tape.maxpool2x2(cur)?,
                LayerSpec::Gap => {
                    let id = tape.global_avg_pool(cur)?;
                    pooled = Some(id);
                    id
                }
                LayerSpec::Dropout { p } => tape.dropout(cur, p, rng::derive_seed(seed, &[index as u64]), train_mode)?,
            };
            if index == self.feature_layer {
                features = Some(cur);
            }
        }
        Ok(ForwardPass {
            tape,
            input,
            params: param_ids,
            features: features.expect("feature layer executed"),
            pooled: pooled.expect("GAP layer executed"),
            logits: logits.expect("validated model ends in sigmoid"),
            scores: cur,
        })
    }

    /// Replaces all parameter values; shapes must match exactly.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<(), ModelError> {
        if values.len() != self.params.len() {
            return Err(ModelError::Structure(format!(
                "{} parameter tensors for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter().zip(&values) {
            p.value.check_same_shape(v, "set_params")?;
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub fn validate_class(&self, class: usize) -> Result<(), ModelError> {
        if class >= self.config.num_classes {
            return Err(ModelError::InvalidClass {
                class,
                num_classes: self.config.num_classes,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(shape: [usize; 3], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, &[]);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn desknet_shapes() {
        let m = ModelGraph::build(ModelConfig::desknet(5)).unwrap();
        assert_eq!(m.feature_shape(), [32, 16, 16]);
        let [_, h, w] = m.feature_shape();
        assert_eq!(h * w, 256);
        let pass = m.forward_with_features(&random_input([3, 64, 64], 1), false, 0).unwrap();
        assert_eq!(pass.scores().shape(), &[5]);
        assert_eq!(pass.features().shape(), &[32, 16, 16]);
        assert!(pass.scores().data().iter().all(|&s| s > 0.0 && s < 1.0));
        assert_eq!(m.param("conv3.weight").unwrap().shape(), &[32, 16, 3, 3]);
    }

    #[test]
    fn same_seed_same_init() {
        let a = ModelGraph::build(ModelConfig::desknet(5).with_seed(9)).unwrap();
        let b = ModelGraph::build(ModelConfig::desknet(5).with_seed(9)).unwrap();
        let c = ModelGraph::build(ModelConfig::desknet(5).with_seed(10)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        assert!(a.param("conv1.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(a.param("conv1.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn inference_is_deterministic() {
        let m = ModelGraph::build(ModelConfig::desknet(3)).unwrap();
        let x = random_input([3, 64, 64], 5);
        let a = m.forward_with_features(&x, false, 1).unwrap();
        let b = m.forward_with_features(&x, false, 2).unwrap();
        assert_eq!(a.scores(), b.scores());
    }

    #[test]
    fn gap_of_features_is_pooled_vector() {
        let m = ModelGraph::build(ModelConfig::desknet(2)).unwrap();
        let pass = m.forward_with_features(&random_input([3, 64, 64], 3), false, 0).unwrap();
        let pooled = crate::autodiff::ops::global_avg_pool(pass.features()).unwrap();
        assert_eq!(&pooled, pass.tape.value(pass.pooled));
        let head = m.forward_head(pass.features(), false, 0).unwrap();
        assert_eq!(head.scores(), pass.scores());
    }

    #[test]
    fn build_errors_name_the_layer() {
        let mut cfg = ModelConfig::desknet(5);
        cfg.input = [3, 62, 62]; // 62 -> 31 after the first pool, odd for the second
        match ModelGraph::build(cfg) {
            Err(ModelError::Build { index: 5, kind: "maxpool", .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = ModelConfig::desknet(5);
        cfg.layers.retain(|l| *l != LayerSpec::Gap);
        assert!(matches!(ModelGraph::build(cfg), Err(ModelError::Build { kind: "dense", .. })));
        let mut cfg = ModelConfig::desknet(5);
        cfg.layers.pop();
        assert!(matches!(ModelGraph::build(cfg), Err(ModelError::Structure(_))));
    }

    #[test]
    fn input_shape_mismatch() {
        let m = ModelGraph::build(ModelConfig::desknet(5)).unwrap();
        let x = Tensor::zeros(&[3, 32, 32]);
        assert!(matches!(m.forward_with_features(&x, false, 0), Err(ModelError::InputShape { .. })));
    }
}
