//! Kernels checked against naive reference implementations.

use proptest::prelude::*;

use lesionmap_core::autodiff::ops::{conv2d, conv2d_backward, dense, global_avg_pool, maxpool2x2};
use lesionmap_core::evaluation::auc_one_vs_rest;
use lesionmap_core::imaging::io::{decode, encode, ImageFormat};
use lesionmap_core::imaging::{flip, FlipAxis, Image};
use lesionmap_core::Tensor;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reads `x[c, y, x]` with zeros outside the image.
fn padded(x: &Tensor, c: usize, y: isize, xx: isize) -> f64 {
    let s = x.shape();
    if y < 0 || xx < 0 || y >= s[1] as isize || xx >= s[2] as isize {
        return 0.0;
    }
    x.data()[(c * s[1] + y as usize) * s[2] + xx as usize]
}

fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b.data()[o];
                for c in 0..ci {
                    for u in 0..kh {
                        for v in 0..kw {
                            let y = (i * stride + u) as isize - pad as isize;
                            let xx = (j * stride + v) as isize - pad as isize;
                            acc += k.data()[((o * ci + c) * kh + u) * kw + v] * padded(x, c, y, xx);
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    tensor(&[co, oh, ow], out)
}

/// Gradients by summing every (output, tap) contribution directly.
fn naive_conv_backward(x: &Tensor, k: &Tensor, g: &Tensor, stride: usize, pad: usize) -> (Tensor, Tensor, Tensor) {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; co];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let go = g.data()[(o * oh + i) * ow + j];
                db[o] += go;
                for c in 0..ci {
                    for u in 0..kh {
                        for v in 0..kw {
                            let y = (i * stride + u) as isize - pad as isize;
                            let xx = (j * stride + v) as isize - pad as isize;
                            let ki = ((o * ci + c) * kh + u) * kw + v;
                            dk[ki] += go * padded(x, c, y, xx);
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                dx[(c * h + y as usize) * w + xx as usize] += go * k.data()[ki];
                            }
                        }
                    }
                }
            }
        }
    }
    (tensor(x.shape(), dx), tensor(k.shape(), dk), tensor(&[co], db))
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() <= tol)
}

#[derive(Debug, Clone)]
struct ConvCase {
    x: Tensor,
    k: Tensor,
    b: Tensor,
    g: Tensor,
    stride: usize,
    pad: usize,
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (1usize..4, 1usize..4, 1usize..4, 0usize..3, 1usize..3, 4usize..10, 4usize..10).prop_flat_map(
        |(ci, co, kern, pad, stride, h, w)| {
            let oh = (h + 2 * pad - kern) / stride + 1;
            let ow = (w + 2 * pad - kern) / stride + 1;
            let vals = |n: usize| prop::collection::vec(-2.0f64..2.0, n);
            (vals(ci * h * w), vals(co * ci * kern * kern), vals(co), vals(co * oh * ow)).prop_map(
                move |(x, k, b, g)| ConvCase {
                    x: tensor(&[ci, h, w], x),
                    k: tensor(&[co, ci, kern, kern], k),
                    b: tensor(&[co], b),
                    g: tensor(&[co, oh, ow], g),
                    stride,
                    pad,
                },
            )
        },
    )
}

proptest! {
    #[test]
    fn conv_matches_nested_loops(c in conv_case()) {
        let fast = conv2d(&c.x, &c.k, &c.b, c.stride, c.pad).unwrap();
        prop_assert!(close(&fast, &naive_conv(&c.x, &c.k, &c.b, c.stride, c.pad), 1e-12));
    }

    #[test]
    fn conv_backward_matches_direct_sums(c in conv_case()) {
        let fast = conv2d_backward(&c.x, &c.k, &c.b, c.stride, c.pad, &c.g).unwrap();
        let (dx, dk, db) = naive_conv_backward(&c.x, &c.k, &c.g, c.stride, c.pad);
        prop_assert!(close(&fast.input, &dx, 1e-12));
        prop_assert!(close(&fast.kernels, &dk, 1e-12));
        prop_assert!(close(&fast.bias, &db, 1e-12));
    }

    #[test]
    fn conv_is_linear_in_input(c in conv_case(), s in -3.0f64..3.0) {
        let zero = Tensor::zeros(c.b.shape());
        let y1 = conv2d(&c.x, &c.k, &zero, c.stride, c.pad).unwrap();
        let scaled = tensor(c.x.shape(), c.x.data().iter().map(|v| v * s).collect());
        let y2 = conv2d(&scaled, &c.k, &zero, c.stride, c.pad).unwrap();
        let expect = tensor(y1.shape(), y1.data().iter().map(|v| v * s).collect());
        prop_assert!(close(&y2, &expect, 1e-10));
    }

    #[test]
    fn maxpool_and_gap_match_loops(c in 1usize..4, h2 in 1usize..6, w2 in 1usize..6, seed in any::<u64>()) {
        let (h, w) = (2 * h2, 2 * w2);
        let data: Vec<f64> = (0..c * h * w).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64).collect();
        let x = tensor(&[c, h, w], data);
        let (pooled, _) = maxpool2x2(&x).unwrap();
        let gap = global_avg_pool(&x).unwrap();
        for ch in 0..c {
            let mut sum = 0.0;
            for i in 0..h2 {
                for j in 0..w2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(u, v)| padded(&x, ch, (2 * i + u) as isize, (2 * j + v) as isize))
                        .fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(pooled.data()[(ch * h2 + i) * w2 + j], m);
                }
            }
            for v in &x.data()[ch * h * w..(ch + 1) * h * w] {
                sum += v;
            }
            prop_assert!((gap.data()[ch] - sum / (h * w) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_matches_loops(n in 1usize..8, m in 1usize..8, seed in any::<u64>()) {
        let f = |i: usize| (((i as u64 + 1).wrapping_mul(seed | 1) >> 40) % 200) as f64 / 100.0 - 1.0;
        let x = tensor(&[n], (0..n).map(f).collect());
        let wt = tensor(&[m, n], (0..m * n).map(|i| f(i + 17)).collect());
        let b = tensor(&[m], (0..m).map(|i| f(i + 99)).collect());
        let y = dense(&x, &wt, &b).unwrap();
        for o in 0..m {
            let expect = b.data()[o] + (0..n).map(|i| wt.data()[o * n + i] * x.data()[i]).sum::<f64>();
            prop_assert!((y.data()[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_maps(
        scores in prop::collection::vec(0u8..20, 2..80),
        labels in prop::collection::vec(0usize..3, 2..80),
    ) {
        let n = scores.len().min(labels.len());
        let (s, l) = (&scores[..n], &labels[..n]);
        let pos = l.iter().filter(|&&v| v == 1).count();
        prop_assume!(pos > 0 && pos < n);
        let raw: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        let warped: Vec<f64> = raw.iter().map(|v| (v / 3.0).exp() - 7.0).collect();
        let a = auc_one_vs_rest(&raw, l, 1).unwrap();
        prop_assert_eq!(a, auc_one_vs_rest(&warped, l, 1).unwrap());
        // reversing the order complements the AUC
        let negated: Vec<f64> = raw.iter().map(|v| -v).collect();
        prop_assert!((a + auc_one_vs_rest(&negated, l, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flips_are_involutions(h in 1usize..20, w in 1usize..20, ch in prop::sample::select(vec![1usize, 3]), seed in any::<u8>()) {
        let px: Vec<u8> = (0..h * w * ch).map(|i| (i as u8).wrapping_mul(seed | 1)).collect();
        let img = Image::new(h, w, ch, px).unwrap();
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            prop_assert_eq!(flip(&flip(&img, axis), axis), img.clone());
        }
        prop_assert_eq!(
            flip(&flip(&img, FlipAxis::Horizontal), FlipAxis::Vertical),
            flip(&flip(&img, FlipAxis::Vertical), FlipAxis::Horizontal)
        );
    }

    #[test]
    fn image_codecs_round_trip(h in 1usize..24, w in 1usize..24, ch in prop::sample::select(vec![1usize, 3]), px in prop::collection::vec(any::<u8>(), 1728)) {
        let img = Image::new(h, w, ch, px[..h * w * ch].to_vec()).unwrap();
        for fmt in [ImageFormat::Pnm, ImageFormat::Png] {
            prop_assert_eq!(decode(&encode(&img, fmt).unwrap()).unwrap(), img.clone());
        }
    }
}

#[test]
fn auc_small_cases_by_hand() {
    // positives {0.9, 0.4}, negatives {0.4, 0.1}: pairs 1 + 1 + 0.5 + 1 = 3.5 of 4
    let a = auc_one_vs_rest(&[0.9, 0.4, 0.4, 0.1], &[1, 1, 0, 0], 1).unwrap();
    assert_eq!(a, 0.875);
    assert!(auc_one_vs_rest(&[0.3, 0.2], &[1, 1], 1).is_err());
}
