//! Contrast-limited adaptive histogram equalization.
//!
//! The image is split into a `rows × cols` grid of tiles. Each tile gets a
//! clipped-histogram equalization mapping; every output pixel blends the
//! mappings of the four surrounding tile centers bilinearly. Color images
//! are processed on their luma channel and the per-pixel luma change is
//! added to all three channels, which leaves the `R−Y`/`B−Y` chroma intact.

use crate::imaging::{Image, ImageError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    /// Tile grid as (rows, columns).
    pub tiles: (usize, usize),
    /// Bin clip limit as a multiple of the mean bin height; must be ≥ 1.
    pub clip_factor: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles: (8, 8),
            clip_factor: 2.0,
        }
    }
}

pub type Mapping = [u8; 256];

/// Clips `hist` at `ceil(clip_factor · n / 256)` and hands the excess back
/// uniformly in a single pass. The `excess mod 256` leftover goes one count
/// each to the lowest-index bins.
pub fn clip_histogram(hist: &mut [u64; 256], n: u64, clip_factor: f64) {
    let limit = (clip_factor * n as f64 / 256.0).ceil();
    if limit >= n as f64 {
        return;
    }
    let limit = limit as u64;
    let mut excess = 0;
    for b in hist.iter_mut() {
        if *b > limit {
            excess += *b - limit;
            *b = limit;
        }
    }
    let share = excess / 256;
    let rem = (excess % 256) as usize;
    for (i, b) in hist.iter_mut().enumerate() {
        *b += share + u64::from(i < rem);
    }
}

/// Scaled CDF mapping `m(v) = round(255 · CDF(v) / n)`.
pub fn cdf_mapping(hist: &[u64; 256], n: u64) -> Mapping {
    let mut map = [0u8; 256];
    let mut cdf = 0u64;
    for (v, &b) in hist.iter().enumerate() {
        cdf += b;
        // round half up in exact integer arithmetic
        map[v] = ((510 * cdf + n) / (2 * n)).min(255) as u8;
    }
    map
}

/// Mapping for one tile's pixel values.
pub fn tile_mapping(values: impl IntoIterator<Item = u8>, clip_factor: f64) -> Mapping {
    let mut hist = [0u64; 256];
    let mut n = 0;
    for v in values {
        hist[v as usize] += 1;
        n += 1;
    }
    if n == 0 {
        return std::array::from_fn(|v| v as u8);
    }
    clip_histogram(&mut hist, n, clip_factor);
    cdf_mapping(&hist, n)
}

fn validate(h: usize, w: usize, params: &ClaheParams) -> Result<(), ImageError> {
    let (tr, tc) = params.tiles;
    if tr == 0 || tc == 0 {
        return Err(ImageError::InvalidParameter(format!("tile grid {tr}x{tc} must be positive")));
    }
    if tr > h || tc > w {
        return Err(ImageError::InvalidParameter(format!(
            "tile grid {tr}x{tc} larger than image {h}x{w}"
        )));
    }
    if !(params.clip_factor >= 1.0) {
        return Err(ImageError::InvalidParameter(format!(
            "clip factor {} must be at least 1",
            params.clip_factor
        )));
    }
    Ok(())
}

/// Tiles all span `ceil(len / n)` samples; the grid may overrun the image by
/// fewer than `n` samples, which are read back by mirroring (`reflect101`).
/// Equal tiles mean equal clip limits, so a constant image maps to one value.
fn tile_extent(len: usize, n: usize) -> usize {
    len.div_ceil(n)
}

/// Mirror index without repeating the edge sample: `len, len+1, …` read
/// `len-2, len-3, …`.
fn reflect101(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

fn tile_centers(len: usize, n: usize) -> Vec<f64> {
    let s = tile_extent(len, n);
    (0..n).map(|i| (i * s) as f64 + (s - 1) as f64 / 2.0).collect()
}

/// For coordinate `p`, the two bracketing tile indices and the weight of the
/// second. Outside the first/last tile centers both indices coincide.
fn bracket(p: usize, centers: &[f64]) -> (usize, usize, f64) {
    let p = p as f64;
    let last = centers.len() - 1;
    if p <= centers[0] {
        return (0, 0, 0.0);
    }
    if p >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.partition_point(|&c| c <= p) - 1;
    (i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i]))
}

/// Per-tile mappings, indexed `[row][col]`.
pub fn tile_mappings(plane: &[u8], h: usize, w: usize, params: &ClaheParams) -> Result<Vec<Vec<Mapping>>, ImageError> {
    validate(h, w, params)?;
    let (sh, sw) = (tile_extent(h, params.tiles.0), tile_extent(w, params.tiles.1));
    Ok((0..params.tiles.0)
        .map(|tr| {
            (0..params.tiles.1)
                .map(|tc| {
                    let vals = (tr * sh..(tr + 1) * sh).flat_map(|y| {
                        let row = reflect101(y, h) * w;
                        (tc * sw..(tc + 1) * sw).map(move |x| plane[row + reflect101(x, w)])
                    });
                    tile_mapping(vals, params.clip_factor)
                })
                .collect()
        })
        .collect())
}

/// CLAHE on a single 8-bit plane.
pub fn clahe_plane(plane: &[u8], h: usize, w: usize, params: &ClaheParams) -> Result<Vec<u8>, ImageError> {
    if plane.len() != h * w {
        return Err(ImageError::Dimensions(format!("plane of {} values for {h}x{w}", plane.len())));
    }
    let maps = tile_mappings(plane, h, w, params)?;
    let row_centers = tile_centers(h, params.tiles.0);
    let col_centers = tile_centers(w, params.tiles.1);
    let col_taps: Vec<_> = (0..w).map(|x| bracket(x, &col_centers)).collect();

    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (r0, r1, fy) = bracket(y, &row_centers);
        for (x, &(c0, c1, fx)) in col_taps.iter().enumerate() {
            let v = plane[y * w + x] as usize;
            let top = (1.0 - fx) * maps[r0][c0][v] as f64 + fx * maps[r0][c1][v] as f64;
            let bottom = (1.0 - fx) * maps[r1][c0][v] as f64 + fx * maps[r1][c1][v] as f64;
            out.push(((1.0 - fy) * top + fy * bottom).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

pub fn clahe(img: &Image, params: &ClaheParams) -> Result<Image, ImageError> {
    let (h, w) = (img.height(), img.width());
    if img.channels() == 1 {
        return Image::new(h, w, 1, clahe_plane(img.pixels(), h, w, params)?);
    }
    let y_in = img.luma();
    let y_out = clahe_plane(&y_in, h, w, params)?;
    let mut out = img.clone();
    for (i, px) in out.pixels_mut().chunks_exact_mut(3).enumerate() {
        let delta = y_out[i] as i32 - y_in[i] as i32;
        for c in px.iter_mut() {
            *c = (*c as i32 + delta).clamp(0, 255) as u8;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_redistribution_conserves_mass() {
        let mut hist = [0u64; 256];
        hist[10] = 1000;
        hist[11] = 24;
        clip_histogram(&mut hist, 1024, 2.0);
        // limit = ceil(2·1024/256) = 8; excess = 992 + 16 = 1008 = 3·256 + 240
        assert_eq!(hist.iter().sum::<u64>(), 1024);
        assert_eq!(hist[10], 8 + 3 + 1);
        assert_eq!(hist[239], 4);
        assert_eq!(hist[240], 3);
    }

    #[test]
    fn unbinding_clip_is_noop() {
        let mut hist = [0u64; 256];
        hist[0] = 5;
        hist[200] = 3;
        let before = hist;
        clip_histogram(&mut hist, 8, 4_294_967_296.0);
        assert_eq!(hist, before);
    }

    #[test]
    fn tiles_larger_than_image_rejected() {
        let img = Image::filled(4, 4, 1, 9).unwrap();
        let params = ClaheParams {
            tiles: (5, 1),
            clip_factor: 2.0,
        };
        assert!(matches!(clahe(&img, &params), Err(ImageError::InvalidParameter(_))));
        let params = ClaheParams {
            tiles: (1, 1),
            clip_factor: 0.5,
        };
        assert!(clahe(&img, &params).is_err());
    }

    #[test]
    fn constant_image_stays_constant() {
        for ch in [1, 3] {
            for v in [0, 77, 255] {
                let img = Image::filled(37, 29, ch, v).unwrap();
                let out = clahe(&img, &ClaheParams::default()).unwrap();
                let first = out.pixels()[0];
                assert!(out.pixels().iter().all(|&p| p == first));
            }
        }
    }

    #[test]
    fn uniform_ramp_is_near_identity() {
        let px: Vec<u8> = (0..4096).map(|i| (i % 256) as u8).collect();
        let img = Image::new(64, 64, 1, px).unwrap();
        let params = ClaheParams {
            tiles: (1, 1),
            clip_factor: 2.0,
        };
        let out = clahe(&img, &params).unwrap();
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn uneven_grid_reflects_into_image() {
        assert_eq!(tile_extent(37, 8), 5);
        assert_eq!((37..40).map(|i| reflect101(i, 37)).collect::<Vec<_>>(), [35, 34, 33]);
        assert_eq!(tile_centers(10, 4), [1.0, 4.0, 7.0, 10.0]);
    }

    #[test]
    fn bracket_clamps_edges() {
        let centers = [1.5, 5.5];
        assert_eq!(bracket(0, &centers), (0, 0, 0.0));
        assert_eq!(bracket(7, &centers), (1, 1, 0.0));
        assert_eq!(bracket(3, &centers), (0, 1, 0.375));
    }
}
