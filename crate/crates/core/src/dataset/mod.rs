//! Labeled image sets: CSV ingestion, class statistics, stratified splits,
//! and a synthetic fundus generator with lesion ground truth.

mod synth;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::fsutil;
use crate::imaging::{read_image, ImageError};
use crate::rng;
use crate::training::Example;

pub use synth::{lesion_radius, synth_generate, synth_image, SynthImage};

/// Labels are severity grades `0..NUM_GRADES`.
pub const NUM_GRADES: usize = 5;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pgm"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    Header {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path} line {line}: malformed row: {detail}")]
    Malformed { path: String, line: u64, detail: String },
    #[error("{path} line {line}: no image file for id `{id}`")]
    MissingFile { path: String, line: u64, id: String },
    #[error("{path} line {line}: label {label} for `{id}` is outside 0..{NUM_GRADES}")]
    LabelOutOfRange {
        path: String,
        line: u64,
        id: String,
        label: i64,
    },
    #[error("{path} line {line}: duplicate id `{id}` (first seen on line {first_line})")]
    DuplicateId {
        path: String,
        line: u64,
        id: String,
        first_line: u64,
    },
    #[error("cannot read image for `{id}`: {source}")]
    Image {
        id: String,
        #[source]
        source: ImageError,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("could not place {count} lesions of radius {radius} in image `{id}`")]
    Placement { id: String, count: usize, radius: f64 },
}

/// Axis-aligned box in pixels: top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LesionBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl LesionBox {
    /// Whether pixel `(row, col)` lies inside the box grown by `margin` on
    /// every side.
    pub fn contains_dilated(&self, row: usize, col: usize, margin: usize) -> bool {
        let (r, c, m) = (row as i64, col as i64, margin as i64);
        let (x, y, w, h) = (self.x as i64, self.y as i64, self.w as i64, self.h as i64);
        c >= x - m && c < x + w + m && r >= y - m && r < y + h + m
    }

    pub fn within(&self, height: usize, width: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: usize,
    /// Ground-truth lesion boxes; empty for real data and for class 0.
    pub boxes: Vec<LesionBox>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io {
            path: path.display().to_string(),
            source,
        },
        kind => DatasetError::Malformed {
            path: path.display().to_string(),
            line,
            detail: format!("{kind:?}"),
        },
    }
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<std::fs::File>, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(DatasetError::Header {
            path: path.display().to_string(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(rdr)
}

fn resolve_image(dir: &Path, id: &str) -> Option<PathBuf> {
    let direct = dir.join(id);
    if direct.is_file() {
        return Some(direct);
    }
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// One validated row of a labels CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub id: String,
    pub label: usize,
    /// 1-based line number in the CSV.
    pub line: u64,
}

/// Reads and validates an `id,label` CSV without touching image files.
pub fn load_labels(labels_csv: &Path) -> Result<Vec<LabelRow>, DatasetError> {
    let mut rdr = open_csv(labels_csv, &["id", "label"])?;
    let shown = labels_csv.display().to_string();
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(labels_csv, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[0].trim().to_string();
        let label_text = row[1].trim();
        if id.is_empty() {
            return Err(DatasetError::Malformed {
                path: shown,
                line,
                detail: "empty id".into(),
            });
        }
        let label: i64 = label_text.parse().map_err(|_| DatasetError::Malformed {
            path: shown.clone(),
            line,
            detail: format!("label `{label_text}` is not an integer"),
        })?;
        if !(0..NUM_GRADES as i64).contains(&label) {
            return Err(DatasetError::LabelOutOfRange {
                path: shown,
                line,
                id,
                label,
            });
        }
        if let Some(&first_line) = seen.get(&id) {
            return Err(DatasetError::DuplicateId {
                path: shown,
                line,
                id,
                first_line,
            });
        }
        seen.insert(id.clone(), line);
        rows.push(LabelRow {
            id,
            label: label as usize,
            line,
        });
    }
    Ok(rows)
}

/// Reads an `id,label` CSV and resolves each id to a file under
/// `image_dir` (the id itself, or the id with a `.png`, `.ppm` or `.pgm`
/// extension). Records keep CSV order.
pub fn load_labeled_dataset(image_dir: &Path, labels_csv: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    load_labels(labels_csv)?
        .into_iter()
        .map(|row| {
            let path = resolve_image(image_dir, &row.id).ok_or_else(|| DatasetError::MissingFile {
                path: labels_csv.display().to_string(),
                line: row.line,
                id: row.id.clone(),
            })?;
            Ok(DatasetRecord {
                id: row.id,
                path,
                label: row.label,
                boxes: Vec::new(),
            })
        })
        .collect()
}

pub fn write_labels_csv(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut out = String::from("id,label\n");
    for r in records {
        let _ = writeln!(out, "{},{}", r.id, r.label);
    }
    fsutil::write_atomic(path, out.as_bytes()).map_err(io_err(path))
}

/// Writes ground truth as one `id,label,box_x,box_y,box_w,box_h` row per box.
pub fn write_lesions_csv(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut out = String::from("id,label,box_x,box_y,box_w,box_h\n");
    for r in records {
        for b in &r.boxes {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.id, r.label, b.x, b.y, b.w, b.h);
        }
    }
    fsutil::write_atomic(path, out.as_bytes()).map_err(io_err(path))
}

/// Reads a lesion ground-truth CSV into boxes per id, in file order.
pub fn load_lesion_boxes(path: &Path) -> Result<HashMap<String, Vec<LesionBox>>, DatasetError> {
    let mut rdr = open_csv(path, &["id", "label", "box_x", "box_y", "box_w", "box_h"])?;
    let mut boxes: HashMap<String, Vec<LesionBox>> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let mut nums = [0usize; 4];
        for (i, n) in nums.iter_mut().enumerate() {
            let text = row[i + 2].trim();
            *n = text.parse().map_err(|_| DatasetError::Malformed {
                path: path.display().to_string(),
                line,
                detail: format!("box coordinate `{text}` is not a non-negative integer"),
            })?;
        }
        let [x, y, w, h] = nums;
        boxes
            .entry(row[0].trim().to_string())
            .or_default()
            .push(LesionBox { x, y, w, h });
    }
    Ok(boxes)
}

/// Copies boxes onto matching records; ids absent from `records` are ignored.
pub fn attach_boxes(records: &mut [DatasetRecord], boxes: &HashMap<String, Vec<LesionBox>>) {
    for r in records {
        if let Some(b) = boxes.get(&r.id) {
            r.boxes = b.clone();
        }
    }
}

/// Loads every record's image, in record order.
pub fn read_examples(records: &[DatasetRecord]) -> Result<Vec<Example>, DatasetError> {
    records
        .par_iter()
        .map(|r| {
            let image = read_image(&r.path).map_err(|source| DatasetError::Image {
                id: r.id.clone(),
                source,
            })?;
            Ok(Example { image, label: r.label })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
}

impl ClassDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn to_table(&self, class_names: &[String]) -> String {
        let width = class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>8}  {:>8}\n", "class", "count", "percent");
        for (i, (&c, &f)) in self.counts.iter().zip(&self.fractions).enumerate() {
            let name = class_names.get(i).cloned().unwrap_or_else(|| format!("class{i}"));
            let _ = writeln!(out, "{name:<width$}  {c:>8}  {:>8.2}", f * 100.0);
        }
        let _ = writeln!(out, "{:<width$}  {:>8}", "total", self.total());
        out
    }
}

impl ClassDistribution {
    /// Counts over `0..num_classes`, widened if a label is larger.
    pub fn from_labels(labels: impl IntoIterator<Item = usize>, num_classes: usize) -> Self {
        let mut counts = vec![0usize; num_classes];
        for l in labels {
            if l >= counts.len() {
                counts.resize(l + 1, 0);
            }
            counts[l] += 1;
        }
        let n: usize = counts.iter().sum();
        let fractions = counts
            .iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect();
        ClassDistribution { counts, fractions }
    }
}

pub fn class_distribution(records: &[DatasetRecord], num_classes: usize) -> ClassDistribution {
    ClassDistribution::from_labels(records.iter().map(|r| r.label), num_classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    /// One message per class too small to appear in every split.
    pub warnings: Vec<String>,
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Largest-remainder apportionment of `n` items: every part is within 1
/// of `n·f`, and the parts sum to `n`.
fn apportion(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    // the small slack keeps products like 0.1·10 from flooring to 0
    let mut parts = exact.map(|e| (e + 1e-9).floor() as usize);
    let mut left = n - parts.iter().sum::<usize>().min(n);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - parts[a] as f64;
        let rb = exact[b] - parts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts
}

/// Splits each class separately after a seeded shuffle. Output lists keep
/// input order.
pub fn stratified_split(records: &[DatasetRecord], fractions: (f64, f64, f64), seed: u64) -> Result<Split, DatasetError> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(DatasetError::InvalidArgument(format!(
            "split fractions {f:?} must be positive and sum to 1"
        )));
    }
    let k = records.iter().map(|r| r.label + 1).max().unwrap_or(0);
    let mut assignment = vec![0u8; records.len()];
    let mut warnings = Vec::new();
    for class in 0..k {
        let mut members: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < f.len() {
            warnings.push(format!(
                "class {class} has {} sample(s), fewer than {} splits; some splits get none",
                members.len(),
                f.len()
            ));
        }
        members.shuffle(&mut rng::stream(seed, &[class as u64]));
        let [n_train, n_val, _] = apportion(members.len(), f);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = if pos < n_train {
                0
            } else if pos < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    let pick = |part: u8| {
        records
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == part)
            .map(|(r, _)| r.clone())
            .collect::<Vec<_>>()
    };
    Ok(Split {
        train: pick(0),
        val: pick(1),
        test: pick(2),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: usize) -> DatasetRecord {
        DatasetRecord {
            id: id.into(),
            path: PathBuf::from(id),
            label,
            boxes: Vec::new(),
        }
    }

    fn write_files(dir: &Path, ids: &[&str]) {
        for id in ids {
            std::fs::write(dir.join(format!("{id}.png")), b"x").unwrap();
        }
    }

    #[test]
    fn loads_in_csv_order() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), &["b", "a", "c"]);
        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "id,label\nb,2\na,0\nc,4\n").unwrap();
        let recs = load_labeled_dataset(dir.path(), &csv).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| (r.id.as_str(), r.label)).collect();
        assert_eq!(ids, vec![("b", 2), ("a", 0), ("c", 4)]);
        assert_eq!(recs[0].path, dir.path().join("b.png"));
    }

    #[test]
    fn loader_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), &["a", "b"]);
        let csv = dir.path().join("labels.csv");
        let run = |body: &str| {
            std::fs::write(&csv, body).unwrap();
            load_labeled_dataset(dir.path(), &csv).unwrap_err()
        };
        match run("id,label\na,0\nb,7\n") {
            DatasetError::LabelOutOfRange { line, label, .. } => assert_eq!((line, label), (3, 7)),
            e => panic!("{e:?}"),
        }
        match run("id,label\na,0\na,1\n") {
            DatasetError::DuplicateId { line, first_line, .. } => assert_eq!((line, first_line), (3, 2)),
            e => panic!("{e:?}"),
        }
        assert!(matches!(run("id,label\nzz,1\n"), DatasetError::MissingFile { line: 2, .. }));
        assert!(matches!(run("id,label\na,x\n"), DatasetError::Malformed { line: 2, .. }));
        assert!(matches!(run("id,label\na,0,9\n"), DatasetError::Malformed { .. }));
        assert!(matches!(run("name,grade\na,0\n"), DatasetError::Header { .. }));
        assert!(matches!(
            load_labeled_dataset(dir.path(), &dir.path().join("nope.csv")),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn distribution() {
        let d = class_distribution(&[], 5);
        assert_eq!(d.counts, vec![0; 5]);
        assert_eq!(d.fractions, vec![0.0; 5]);
        let recs: Vec<_> = [0, 0, 0, 0, 1].iter().map(|&l| rec("x", l)).collect();
        let d = class_distribution(&recs, 2);
        assert_eq!(d.counts, vec![4, 1]);
        assert_eq!(d.total(), 5);
        let w = crate::training::class_weights(&d.counts).unwrap();
        assert_eq!(w.as_slice(), &[0.625, 2.5]);
    }

    #[test]
    fn apportion_within_one() {
        assert_eq!(apportion(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(apportion(1, [0.5, 0.25, 0.25]), [1, 0, 0]);
        for n in 0..60 {
            let f = [0.7, 0.2, 0.1];
            let p = apportion(n, f);
            assert_eq!(p.iter().sum::<usize>(), n);
            for i in 0..3 {
                assert!((p[i] as f64 - f[i] * n as f64).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let recs: Vec<_> = (0..20).map(|i| rec(&format!("r{i}"), i % 2)).collect();
        let s = stratified_split(&recs, DEFAULT_FRACTIONS, 7).unwrap();
        for class in 0..2 {
            let count = |v: &[DatasetRecord]| v.iter().filter(|r| r.label == class).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (8, 1, 1));
        }
        let mut all: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).map(|r| r.id.clone()).collect();
        all.sort();
        let mut want: Vec<_> = recs.iter().map(|r| r.id.clone()).collect();
        want.sort();
        assert_eq!(all, want);
        assert_eq!(stratified_split(&recs, DEFAULT_FRACTIONS, 7).unwrap(), s);
        assert_ne!(stratified_split(&recs, DEFAULT_FRACTIONS, 8).unwrap(), s);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn tiny_class_warns() {
        let recs = vec![rec("a", 0), rec("b", 0), rec("c", 0), rec("d", 1)];
        let s = stratified_split(&recs, DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 4);
        assert!(stratified_split(&recs, (0.5, 0.5, 0.0), 1).is_err());
        assert!(stratified_split(&recs, (0.5, 0.3, 0.1), 1).is_err());
    }

    #[test]
    fn dilated_box() {
        let b = LesionBox { x: 10, y: 20, w: 3, h: 2 };
        assert!(b.contains_dilated(20, 10, 0));
        assert!(b.contains_dilated(21, 12, 0));
        assert!(!b.contains_dilated(22, 12, 0));
        assert!(b.contains_dilated(25, 16, 4));
        assert!(!b.contains_dilated(26, 16, 4));
        assert!(b.contains_dilated(16, 6, 4));
        assert!(!b.contains_dilated(15, 6, 4));
        assert!(b.within(22, 13));
        assert!(!b.within(21, 13));
    }
}
