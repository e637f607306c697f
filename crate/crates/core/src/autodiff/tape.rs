//! Tape-based reverse mode over a sequential op list.
//!
//! Values are appended to the tape as they are produced and never mutated.
//! [`Tape::backward_from`] walks the recorded ops in exact reverse order and
//! accumulates gradients for every value, including leaves (parameters,
//! inputs) and intermediate feature maps.

use crate::autodiff::ops;
use crate::tensor::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv2d {
        input: ValueId,
        kernels: ValueId,
        bias: ValueId,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: ValueId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: ValueId,
    },
    Dense {
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
    },
    Relu {
        input: ValueId,
    },
    Sigmoid {
        input: ValueId,
    },
    Dropout {
        input: ValueId,
        // None in inference mode
        mask: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    output: ValueId,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push_value(value)
    }

    fn push_value(&mut self, value: Tensor) -> ValueId {
        self.values.push(value);
        ValueId(self.values.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor) -> ValueId {
        let output = self.push_value(value);
        self.nodes.push(Node { op, output });
        output
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    pub fn num_ops(&self) -> usize {
        self.nodes.len()
    }

    /// Output of the most recently recorded op (or last leaf if no op ran).
    pub fn last(&self) -> Option<ValueId> {
        self.values.len().checked_sub(1).map(ValueId)
    }

    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernels: ValueId,
        bias: ValueId,
        stride: usize,
        padding: usize,
    ) -> Result<ValueId, TensorError> {
        let out = ops::conv2d(
            self.value(input),
            self.value(kernels),
            self.value(bias),
            stride,
            padding,
        )?;
        Ok(self.record(
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
                padding,
            },
            out,
        ))
    }

    pub fn maxpool2x2(&mut self, input: ValueId) -> Result<ValueId, TensorError> {
        let (out, argmax) = ops::maxpool2x2(self.value(input))?;
        Ok(self.record(Op::MaxPool { input, argmax }, out))
    }

    pub fn global_avg_pool(&mut self, input: ValueId) -> Result<ValueId, TensorError> {
        let out = ops::global_avg_pool(self.value(input))?;
        Ok(self.record(Op::GlobalAvgPool { input }, out))
    }

    pub fn dense(
        &mut self,
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
    ) -> Result<ValueId, TensorError> {
        let out = ops::dense(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.record(
            Op::Dense {
                input,
                weight,
                bias,
            },
            out,
        ))
    }

    pub fn relu(&mut self, input: ValueId) -> ValueId {
        let out = ops::relu(self.value(input));
        self.record(Op::Relu { input }, out)
    }

    pub fn sigmoid(&mut self, input: ValueId) -> ValueId {
        let out = ops::sigmoid(self.value(input));
        self.record(Op::Sigmoid { input }, out)
    }

    pub fn dropout(
        &mut self,
        input: ValueId,
        p: f64,
        seed: u64,
        train_mode: bool,
    ) -> Result<ValueId, TensorError> {
        if !train_mode {
            let out = ops::dropout(self.value(input), p, seed, false)?;
            return Ok(self.record(Op::Dropout { input, mask: None }, out));
        }
        let mask = ops::dropout_mask(self.value(input).len(), p, seed)?;
        let out = ops::apply_mask(self.value(input), &mask);
        Ok(self.record(
            Op::Dropout {
                input,
                mask: Some(mask),
            },
            out,
        ))
    }

    /// Backward pass from the last recorded value.
    pub fn backward(&self, seed: &Tensor) -> Result<Gradients, TensorError> {
        let out = self
            .last()
            .ok_or_else(|| TensorError::arg("backward", "tape is empty"))?;
        self.backward_from(out, seed)
    }

    /// Computes `∂(seed · v_out)/∂v` for every value `v` on the tape.
    /// Values that do not influence `output` receive zero gradients.
    pub fn backward_from(&self, output: ValueId, seed: &Tensor) -> Result<Gradients, TensorError> {
        let out_val = self.value(output);
        if seed.shape() != out_val.shape() {
            return Err(TensorError::dim(
                "backward",
                format!(
                    "seed shape {:?} does not match output shape {:?}",
                    seed.shape(),
                    out_val.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[output.0] = Some(seed.clone());
        let mut visited = Vec::new();

        for (node_idx, node) in self.nodes.iter().enumerate().rev() {
            if node.output > output {
                continue;
            }
            let Some(g) = grads[node.output.0].take() else {
                continue;
            };
            visited.push(node_idx);
            match &node.op {
                Op::Conv2d {
                    input,
                    kernels,
                    bias,
                    stride,
                    padding,
                } => {
                    let cg = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*kernels),
                        self.value(*bias),
                        *stride,
                        *padding,
                        &g,
                    )?;
                    accumulate(&mut grads, *input, cg.input);
                    accumulate(&mut grads, *kernels, cg.kernels);
                    accumulate(&mut grads, *bias, cg.bias);
                }
                Op::MaxPool { input, argmax } => {
                    let gi = ops::maxpool2x2_backward(self.value(*input).shape(), argmax, &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::GlobalAvgPool { input } => {
                    let gi = ops::global_avg_pool_backward(self.value(*input).shape(), &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let dg = ops::dense_backward(self.value(*input), self.value(*weight), &g);
                    accumulate(&mut grads, *input, dg.input);
                    accumulate(&mut grads, *weight, dg.weight);
                    accumulate(&mut grads, *bias, dg.bias);
                }
                Op::Relu { input } => {
                    let gi = ops::relu_backward(self.value(*input), &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::Sigmoid { input } => {
                    let gi = ops::sigmoid_backward(self.value(node.output), &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::Dropout { input, mask } => {
                    let gi = match mask {
                        Some(m) => ops::apply_mask(&g, m),
                        None => g.clone(),
                    };
                    accumulate(&mut grads, *input, gi);
                }
            }
            // keep the output's own gradient available to callers
            grads[node.output.0] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.values)
            .map(|(g, v)| g.unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect();
        Ok(Gradients { grads, visited })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: ValueId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing
            .add_assign(&g)
            .expect("gradient shape matches its value"),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients for every value on a tape, indexed by [`ValueId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn take(&mut self, id: ValueId) -> Tensor {
        std::mem::replace(&mut self.grads[id.0], Tensor::zeros(&[1]))
    }

    /// Indices of the ops processed during the backward pass, in visit order.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}
