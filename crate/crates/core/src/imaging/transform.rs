//! Geometric and photometric transforms: resize, flips, normalization.

use crate::imaging::{Image, ImageError};
use crate::tensor::Tensor;

/// Bilinear resampling of a single real-valued plane with the half-pixel
/// center convention: `src = (dst + 0.5)·(in/out) − 0.5`, clamped to the
/// valid range.
pub fn resample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let ys: Vec<_> = (0..out_h).map(|d| source_tap(d, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|d| source_tap(d, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = (1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
            let bottom = (1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
            out.push((1.0 - fy) * top + fy * bottom);
        }
    }
    out
}

fn source_tap(dst: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let scale = input as f64 / output as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(input - 1);
    (i0, i1, s - i0 as f64)
}

/// Per-channel bilinear resize, rounded half away from zero.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image, ImageError> {
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::InvalidParameter(format!(
            "resize target {out_h}x{out_w} must be positive"
        )));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let mut out = vec![0u8; out_h * out_w * c];
    for ch in 0..c {
        let plane: Vec<f64> = img.pixels()[ch..].iter().step_by(c).map(|&v| v as f64).collect();
        let resized = resample_bilinear(&plane, h, w, out_h, out_w);
        for (i, v) in resized.into_iter().enumerate() {
            out[i * c + ch] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Image::new(out_h, out_w, c, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

pub fn flip(img: &Image, axis: FlipAxis) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.pixels();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        let sy = match axis {
            FlipAxis::Vertical => h - 1 - y,
            FlipAxis::Horizontal => y,
        };
        let row = &src[sy * w * c..(sy + 1) * w * c];
        match axis {
            FlipAxis::Vertical => out.extend_from_slice(row),
            FlipAxis::Horizontal => {
                for px in row.chunks_exact(c).rev() {
                    out.extend_from_slice(px);
                }
            }
        }
    }
    Image::new(h, w, c, out).expect("flip preserves dimensions")
}

/// Channel statistics used by [`normalize`]. A single entry broadcasts over
/// all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: vec![0.5],
            std: vec![0.5],
        }
    }
}

impl Normalization {
    fn channel(&self, c: usize) -> (f64, f64) {
        let pick = |v: &[f64]| if v.len() == 1 { v[0] } else { v[c] };
        (pick(&self.mean), pick(&self.std))
    }

    pub fn validate(&self, channels: usize) -> Result<(), ImageError> {
        for (name, v) in [("mean", &self.mean), ("std", &self.std)] {
            if v.len() != 1 && v.len() != channels {
                return Err(ImageError::InvalidParameter(format!(
                    "{name} has {} entries for a {channels}-channel image",
                    v.len()
                )));
            }
        }
        if let Some(s) = self.std.iter().find(|s| !(**s > 0.0)) {
            return Err(ImageError::InvalidParameter(format!("std {s} must be positive")));
        }
        Ok(())
    }
}

/// `(pixel/255 − mean_c)/std_c` in channel-planar `[C, H, W]` layout.
pub fn normalize(img: &Image, norm: &Normalization) -> Result<Tensor, ImageError> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    norm.validate(c)?;
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        let (mean, std) = norm.channel(ch);
        let plane = &mut data[ch * h * w..(ch + 1) * h * w];
        for (dst, &v) in plane.iter_mut().zip(img.pixels()[ch..].iter().step_by(c)) {
            *dst = (v as f64 / 255.0 - mean) / std;
        }
    }
    Ok(Tensor::new(vec![c, h, w], data).expect("normalize layout"))
}
