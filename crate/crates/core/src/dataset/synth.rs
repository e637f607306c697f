//! Fundus-like synthetic images with lesion ground truth.
//!
//! A dark background holds a reddish disc whose brightness falls off
//! radially. Class `c` carries `c` non-overlapping round blobs, each bright
//! or dark at random, placed wholly inside the disc. Blob radius grows with
//! class so that individual lesions, not only their number, carry the
//! class signal.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{write_labels_csv, write_lesions_csv, DatasetError, DatasetRecord, LesionBox, NUM_GRADES};
use crate::imaging::{write_image, Image};
use crate::rng;

const BACKGROUND: [f64; 3] = [14.0, 9.0, 7.0];
const DISC: [f64; 3] = [196.0, 92.0, 52.0];
const BRIGHT_LESION: [f64; 3] = [250.0, 232.0, 150.0];
// Dark purple: darker than the disc, yet unlike the dark background in hue.
const DARK_LESION: [f64; 3] = [60.0, 10.0, 90.0];

const PLACEMENT_TRIES: usize = 2000;

/// Blob radius for class `c ≥ 1`, in pixels. At 64 px the radii shrink from
/// 6 (class 1) to 3 (class `K−1`); other sizes scale linearly. Fewer blobs
/// get larger ones so that a lone lesion is still the dominant feature.
pub fn lesion_radius(class: usize, num_classes: usize, size: usize) -> f64 {
    let scale = size as f64 / 64.0;
    let step = if num_classes > 2 {
        3.0 * (class.saturating_sub(1)) as f64 / (num_classes - 2) as f64
    } else {
        0.0
    };
    ((6.0 - step) * scale).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub image: Image,
    pub boxes: Vec<LesionBox>,
}

fn disc_geometry(size: usize) -> (f64, f64) {
    ((size as f64 - 1.0) / 2.0, 0.45 * size as f64)
}

fn place_blobs(rng: &mut ChaCha8Rng, count: usize, radius: f64, size: usize) -> Option<Vec<(f64, f64)>> {
    let (center, disc_r) = disc_geometry(size);
    // every covered pixel stays at least one pixel inside the rim
    let reach = disc_r - radius - 1.0;
    if count > 0 && reach < 0.0 {
        return None;
    }
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(count);
    let mut tries = 0;
    while placed.len() < count {
        tries += 1;
        if tries > PLACEMENT_TRIES {
            return None;
        }
        let (x, y) = (rng.gen_range(-reach..=reach), rng.gen_range(-reach..=reach));
        if x * x + y * y > reach * reach {
            continue;
        }
        let (bx, by) = (center + x, center + y);
        let gap = 2.0 * radius + 2.0;
        if placed.iter().all(|&(px, py)| (px - bx).powi(2) + (py - by).powi(2) >= gap * gap) {
            placed.push((bx, by));
        }
    }
    Some(placed)
}

fn noisy(rng: &mut ChaCha8Rng, base: f64, amplitude: f64) -> u8 {
    (base + rng.gen_range(-amplitude..=amplitude)).round().clamp(0.0, 255.0) as u8
}

/// Draws one image of class `label` from a seed.
pub fn synth_image(label: usize, num_classes: usize, size: usize, seed: u64) -> Option<SynthImage> {
    let mut rng = rng::stream(seed, &[]);
    let radius = lesion_radius(label, num_classes, size);
    let blobs = place_blobs(&mut rng, label, radius, size)?;
    let bright: Vec<bool> = blobs.iter().map(|_| rng.gen_bool(0.5)).collect();
    let (center, disc_r) = disc_geometry(size);

    let mut pixels = Vec::with_capacity(size * size * 3);
    let mut extents = vec![(usize::MAX, usize::MAX, 0usize, 0usize); blobs.len()];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let d = ((fx - center).powi(2) + (fy - center).powi(2)).sqrt();
            let hit = blobs
                .iter()
                .position(|&(bx, by)| (fx - bx).powi(2) + (fy - by).powi(2) <= radius * radius);
            let (color, amplitude) = match hit {
                Some(i) => {
                    let e = &mut extents[i];
                    *e = (e.0.min(x), e.1.min(y), e.2.max(x), e.3.max(y));
                    (if bright[i] { BRIGHT_LESION } else { DARK_LESION }, 4.0)
                }
                None if d <= disc_r => {
                    let g = 1.0 - 0.25 * (d / disc_r).powi(2);
                    (DISC.map(|c| c * g), 8.0)
                }
                None => (BACKGROUND, 4.0),
            };
            for c in color {
                pixels.push(noisy(&mut rng, c, amplitude));
            }
        }
    }
    let boxes = extents
        .into_iter()
        .map(|(x0, y0, x1, y1)| LesionBox {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        })
        .collect();
    let image = Image::new(size, size, 3, pixels).expect("size is positive");
    Some(SynthImage { image, boxes })
}

/// Writes `count` PNG images plus `labels.csv` and `lesions.csv` into
/// `out_dir`. Labels cycle through the classes so counts differ by at most
/// one; image `i` is drawn from a seed derived from `(seed, i)`.
pub fn synth_generate(
    out_dir: &Path,
    count: usize,
    num_classes: usize,
    image_size: usize,
    seed: u64,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    if !(2..=NUM_GRADES).contains(&num_classes) {
        return Err(DatasetError::InvalidArgument(format!(
            "classes must be in 2..={NUM_GRADES}, got {num_classes}"
        )));
    }
    if count < num_classes {
        return Err(DatasetError::InvalidArgument(format!(
            "count {count} is smaller than the number of classes {num_classes}"
        )));
    }
    if image_size < 32 {
        return Err(DatasetError::InvalidArgument(format!("image size {image_size} is below 32")));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| DatasetError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let digits = count.to_string().len().max(5);
    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let label = i % num_classes;
            let id = format!("synth_{i:0digits$}");
            let synth = synth_image(label, num_classes, image_size, rng::derive_seed(seed, &[i as u64])).ok_or_else(
                || DatasetError::Placement {
                    id: id.clone(),
                    count: label,
                    radius: lesion_radius(label, num_classes, image_size),
                },
            )?;
            let path = out_dir.join(format!("{id}.png"));
            write_image(&path, &synth.image).map_err(|source| DatasetError::Image {
                id: id.clone(),
                source,
            })?;
            Ok(DatasetRecord {
                id,
                path,
                label,
                boxes: synth.boxes,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    write_labels_csv(&out_dir.join("labels.csv"), &records)?;
    write_lesions_csv(&out_dir.join("lesions.csv"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radii() {
        assert_eq!(lesion_radius(1, 5, 64), 6.0);
        assert_eq!(lesion_radius(3, 5, 64), 4.0);
        assert_eq!(lesion_radius(4, 5, 64), 3.0);
        assert_eq!(lesion_radius(1, 2, 32), 3.0);
    }

    #[test]
    fn boxes_match_class_and_stay_in_disc() {
        for size in [32, 64, 96] {
            for label in 0..5 {
                for s in 0..20u64 {
                    let im = synth_image(label, 5, size, s).unwrap();
                    assert_eq!(im.boxes.len(), label);
                    let (c, r) = disc_geometry(size);
                    for b in &im.boxes {
                        assert!(b.within(size, size));
                        let (bx, by) = (b.x as f64 + (b.w as f64 - 1.0) / 2.0, b.y as f64 + (b.h as f64 - 1.0) / 2.0);
                        let half = b.w.max(b.h) as f64 / 2.0;
                        assert!(((bx - c).powi(2) + (by - c).powi(2)).sqrt() + half <= r + 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_image_and_seeds_differ() {
        let a = synth_image(3, 5, 64, 11).unwrap();
        assert_eq!(a, synth_image(3, 5, 64, 11).unwrap());
        assert_ne!(a.image, synth_image(3, 5, 64, 12).unwrap().image);
    }

    #[test]
    fn generate_writes_balanced_set() {
        let dir = tempfile::tempdir().unwrap();
        let recs = synth_generate(dir.path(), 100, 5, 32, 3).unwrap();
        let d = super::super::class_distribution(&recs, 5);
        assert_eq!(d.counts, vec![20; 5]);
        assert!(recs.iter().filter(|r| r.label == 0).all(|r| r.boxes.is_empty()));
        let loaded = super::super::load_labeled_dataset(dir.path(), &dir.path().join("labels.csv")).unwrap();
        assert_eq!(loaded.len(), 100);
        let boxes = super::super::load_lesion_boxes(&dir.path().join("lesions.csv")).unwrap();
        assert_eq!(boxes.values().map(Vec::len).sum::<usize>(), 20 * (1 + 2 + 3 + 4));
        assert!(synth_generate(dir.path(), 4, 5, 64, 0).is_err());
        assert!(synth_generate(dir.path(), 10, 5, 31, 0).is_err());
    }
}
