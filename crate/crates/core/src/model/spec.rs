//! Layer specifications and the `key = value` model config format.
//!
//! ```text
//! input = 3x64x64
//! num_classes = 5
//! seed = 0
//! layers = conv:8:3:1:1 relu maxpool conv:16 relu maxpool conv:32 relu gap dropout:0.5 dense sigmoid
//! ```
//!
//! `conv:OUT[:K[:STRIDE[:PAD]]]` defaults to a 3x3 kernel, stride 1 and
//! `K/2` padding. `dense` without a width produces `num_classes` outputs.

use std::fmt;

use crate::config::{ConfigError, KeyValues};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool,
    Gap,
    Dropout {
        p: f64,
    },
    /// `None` means `num_classes` units.
    Dense {
        units: Option<usize>,
    },
    Sigmoid,
}

impl LayerSpec {
    pub fn conv3x3(out_channels: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Gap => "gap",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(token: &str) -> Result<Self, String> {
        let mut parts = token.split(':');
        let kind = parts.next().unwrap_or_default();
        let nums: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<Option<usize>, String> {
            nums.get(i)
                .map(|s| s.parse::<usize>().map_err(|e| format!("{token}: {e}")))
                .transpose()
        };
        let arity = |max: usize| {
            if nums.len() > max {
                Err(format!("{token}: too many arguments"))
            } else {
                Ok(())
            }
        };
        match kind {
            "conv" => {
                arity(4)?;
                let out_channels = num(0)?.ok_or_else(|| format!("{token}: conv needs an output channel count"))?;
                let kernel = num(1)?.unwrap_or(3);
                let stride = num(2)?.unwrap_or(1);
                let padding = num(3)?.unwrap_or(kernel / 2);
                Ok(LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                })
            }
            "dropout" => {
                arity(1)?;
                let p = match nums.first() {
                    Some(s) => s.parse::<f64>().map_err(|e| format!("{token}: {e}"))?,
                    None => 0.5,
                };
                Ok(LayerSpec::Dropout { p })
            }
            "dense" => {
                arity(1)?;
                Ok(LayerSpec::Dense { units: num(0)? })
            }
            "relu" | "maxpool" | "gap" | "sigmoid" => {
                arity(0)?;
                Ok(match kind {
                    "relu" => LayerSpec::Relu,
                    "maxpool" => LayerSpec::MaxPool,
                    "gap" => LayerSpec::Gap,
                    _ => LayerSpec::Sigmoid,
                })
            }
            other => Err(format!("unknown layer kind `{other}`")),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv:{out_channels}:{kernel}:{stride}:{padding}"),
            LayerSpec::Dropout { p } => write!(f, "dropout:{p}"),
            LayerSpec::Dense { units: Some(n) } => write!(f, "dense:{n}"),
            other => f.write_str(other.kind()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input shape as `[channels, height, width]`.
    pub input: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// The default three-block network for 3x64x64 inputs; its last
    /// convolutional activation (32x16x16) feeds the GAP head.
    pub fn desknet(num_classes: usize) -> Self {
        use LayerSpec::*;
        ModelConfig {
            input: [3, 64, 64],
            num_classes,
            layers: vec![
                LayerSpec::conv3x3(8),
                Relu,
                MaxPool,
                LayerSpec::conv3x3(16),
                Relu,
                MaxPool,
                LayerSpec::conv3x3(32),
                Relu,
                Gap,
                Dropout { p: 0.5 },
                Dense { units: None },
                Sigmoid,
            ],
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.check_keys(&["input", "num_classes", "layers", "seed"])?;
        let input_text: String = kv.require("input")?;
        let dims: Vec<usize> = input_text
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| ConfigError::Value {
                key: "input".into(),
                value: input_text.clone(),
                reason: e.to_string(),
            })?;
        let input: [usize; 3] = dims.try_into().map_err(|_| ConfigError::Value {
            key: "input".into(),
            value: input_text.clone(),
            reason: "expected CxHxW".into(),
        })?;
        let layers_text: String = kv.require("layers")?;
        let layers = layers_text
            .split_whitespace()
            .map(LayerSpec::parse)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|reason| ConfigError::Value {
                key: "layers".into(),
                value: layers_text.clone(),
                reason,
            })?;
        Ok(ModelConfig {
            input,
            num_classes: kv.require("num_classes")?,
            layers,
            seed: kv.parsed("seed")?.unwrap_or(0),
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let [c, h, w] = self.input;
        kv.set("input", format!("{c}x{h}x{w}"));
        kv.set("num_classes", self.num_classes.to_string());
        kv.set("seed", self.seed.to_string());
        let layers: Vec<String> = self.layers.iter().map(|l| l.to_string()).collect();
        kv.set("layers", layers.join(" "));
        kv
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_key_values().fmt(f)
    }
}
