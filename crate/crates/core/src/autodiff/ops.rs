//! Forward and backward kernels for the differentiable layer primitives.
//!
//! Every function here is pure. Spatial tensors are channel-planar
//! `[C, H, W]`, kernels are `[C_out, C_in, kh, kw]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tensor, TensorError};

fn expect_rank(t: &Tensor, rank: usize, op: &'static str, what: &str) -> Result<(), TensorError> {
    if t.rank() != rank {
        return Err(TensorError::dim(
            op,
            format!("{what} must have rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Output extent of a strided, zero-padded correlation along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Half-open range of output positions `o` whose tap `o*stride + offset - padding`
/// lands inside `[0, input)`.
fn valid_taps(offset: usize, padding: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = if offset >= padding {
        0
    } else {
        (padding - offset).div_ceil(stride)
    };
    let hi = if input + padding <= offset {
        0
    } else {
        ((input - 1 + padding - offset) / stride + 1).min(output)
    };
    (lo, hi.max(lo))
}

struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry, TensorError> {
    const OP: &str = "conv2d";
    expect_rank(input, 3, OP, "input")?;
    expect_rank(kernels, 4, OP, "kernels")?;
    expect_rank(bias, 1, OP, "bias")?;
    if stride == 0 {
        return Err(TensorError::arg(OP, "stride must be at least 1"));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ks = kernels.shape();
    let (c_out, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if kc != c_in {
        return Err(TensorError::dim(
            OP,
            format!("input has {c_in} channels but kernels expect {kc}"),
        ));
    }
    if bias.len() != c_out {
        return Err(TensorError::dim(
            OP,
            format!("bias length {} does not match {c_out} output channels", bias.len()),
        ));
    }
    let oh = conv_output_len(h, kh, stride, padding);
    let ow = conv_output_len(w, kw, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
        }),
        _ => Err(TensorError::dim(
            OP,
            format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * padding, w + 2 * padding),
        )),
    }
}

/// 2-d cross-correlation (no kernel flip) with zero padding.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let g = conv_geometry(input, kernels, bias, stride, padding)?;
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0; g.c_out * g.oh * g.ow];
    for o in 0..g.c_out {
        let plane = &mut out[o * g.oh * g.ow..(o + 1) * g.oh * g.ow];
        plane.fill(bias.data()[o]);
        for c in 0..g.c_in {
            let xin = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_taps(ky, padding, stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let wgt = k[((o * g.c_in + c) * g.kh + ky) * g.kw + kx];
                    let (xlo, xhi) = valid_taps(kx, padding, stride, g.w, g.ow);
                    for oy in ylo..yhi {
                        let iy = oy * stride + ky - padding;
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut plane[oy * g.ow..(oy + 1) * g.ow];
                        for ox in xlo..xhi {
                            orow[ox] += wgt * row[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<Conv2dGrads, TensorError> {
    let g = conv_geometry(input, kernels, bias, stride, padding)?;
    if grad_out.shape() != [g.c_out, g.oh, g.ow] {
        return Err(TensorError::dim(
            "conv2d_backward",
            format!("output gradient {:?} vs output [{}, {}, {}]", grad_out.shape(), g.c_out, g.oh, g.ow),
        ));
    }
    let x = input.data();
    let k = kernels.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.c_out];
    for o in 0..g.c_out {
        let gplane = &go[o * g.oh * g.ow..(o + 1) * g.oh * g.ow];
        gb[o] = gplane.iter().sum();
        for c in 0..g.c_in {
            let xin = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            let gxin = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_taps(ky, padding, stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let kidx = ((o * g.c_in + c) * g.kh + ky) * g.kw + kx;
                    let wgt = k[kidx];
                    let (xlo, xhi) = valid_taps(kx, padding, stride, g.w, g.ow);
                    let mut acc = 0.0;
                    for oy in ylo..yhi {
                        let iy = oy * stride + ky - padding;
                        let grow = &gplane[oy * g.ow..(oy + 1) * g.ow];
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        let grow_in = &mut gxin[iy * g.w..(iy + 1) * g.w];
                        for ox in xlo..xhi {
                            let ix = ox * stride + kx - padding;
                            acc += grow[ox] * row[ix];
                            grow_in[ix] += grow[ox] * wgt;
                        }
                    }
                    gk[kidx] += acc;
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        kernels: Tensor::new(kernels.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.c_out], gb)?,
    })
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// cell, the flat input index of the winning element (first in row-major
/// scan order on ties).
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>), TensorError> {
    const OP: &str = "maxpool2x2";
    expect_rank(input, 3, OP, "input")?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::dim(OP, format!("spatial size {h}x{w} must be even")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ch * h + 2 * oy) * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

pub fn maxpool2x2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    let data = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        data[idx] += g;
    }
    gx
}

/// Spatial mean of every channel: `[K, H, W] -> [K]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank(input, 3, "global_avg_pool", "input")?;
    let k = input.shape()[0];
    let z = input.shape()[1] * input.shape()[2];
    let out = input
        .data()
        .chunks_exact(z)
        .map(|plane| plane.iter().sum::<f64>() / z as f64)
        .collect();
    Tensor::new(vec![k], out)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let z = input_shape[1] * input_shape[2];
    let mut data = Vec::with_capacity(grad_out.len() * z);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / z as f64, z));
    }
    Tensor::new(input_shape.to_vec(), data).expect("gap backward shape")
}

/// Affine map `W·x + b` with `W` of shape `[m, n]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    const OP: &str = "dense";
    expect_rank(weight, 2, OP, "weight")?;
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != n {
        return Err(TensorError::dim(
            OP,
            format!("input length {} but weight has {n} columns", input.len()),
        ));
    }
    if bias.len() != m {
        return Err(TensorError::dim(
            OP,
            format!("bias length {} but weight has {m} rows", bias.len()),
        ));
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect();
    Tensor::new(vec![m], out)
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> DenseGrads {
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; n];
    let mut gw = Vec::with_capacity(m * n);
    for (row, &gi) in weight.data().chunks_exact(n).zip(g) {
        for (j, &w) in row.iter().enumerate() {
            gx[j] += w * gi;
            gw.push(gi * x[j]);
        }
    }
    DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gx).expect("dense input grad"),
        weight: Tensor::new(vec![m, n], gw).expect("dense weight grad"),
        bias: grad_out.clone(),
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("relu grad")
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("sigmoid grad")
}

/// Inverted-dropout multipliers: each entry is 0 with probability `p`,
/// otherwise `1/(1-p)`. Fully determined by `seed`.
pub fn dropout_mask(len: usize, p: f64, seed: u64) -> Result<Vec<f64>, TensorError> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::arg("dropout", format!("p = {p} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect())
}

/// Inverted dropout; identity (bitwise) when `train_mode` is false.
pub fn dropout(input: &Tensor, p: f64, seed: u64, train_mode: bool) -> Result<Tensor, TensorError> {
    if !train_mode {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::arg("dropout", format!("p = {p} outside [0, 1)")));
        }
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.len(), p, seed)?;
    Ok(apply_mask(input, &mask))
}

pub(crate) fn apply_mask(input: &Tensor, mask: &[f64]) -> Tensor {
    let data = input.data().iter().zip(mask).map(|(x, m)| x * m).collect();
    Tensor::new(input.shape().to_vec(), data).expect("mask shape")
}
