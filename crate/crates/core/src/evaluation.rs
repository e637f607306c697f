//! Accuracy, confusion matrices, one-vs-rest AUC and tabular reports.

use std::fmt::Write as _;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("length mismatch: {0} predictions/scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("index {index} out of range for {num_classes} classes")]
    OutOfRange { index: usize, num_classes: usize },
    #[error("AUC undefined for class {0}: needs at least one positive and one negative sample")]
    UndefinedAuc(usize),
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

pub const GRADE_NAMES: [&str; 5] = ["Normal", "Mild", "Moderate", "Severe", "Proliferative"];

/// Grade names for five classes, `class0..` otherwise.
pub fn default_class_names(k: usize) -> Vec<String> {
    if k == GRADE_NAMES.len() {
        GRADE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|c| format!("class{c}")).collect()
    }
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `cells[t][p]` counts samples labelled `t` and predicted `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn cells(&self) -> &[Vec<u64>] {
        &self.cells
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.cells[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.cells.len()).map(|i| self.cells[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.cells.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    let mut cells = vec![vec![0u64; k]; k];
    for (&p, &t) in predictions.iter().zip(labels) {
        for index in [p, t] {
            if index >= k {
                return Err(EvalError::OutOfRange { index, num_classes: k });
            }
        }
        cells[t][p] += 1;
    }
    Ok(ConfusionMatrix { cells })
}

/// Mann–Whitney AUC of `scores` for `class` against all other labels,
/// computed from mid-ranks (ties count one half).
pub fn auc_one_vs_rest(scores: &[f64], labels: &[usize], class: usize) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(s));
    }
    let n_pos = labels.iter().filter(|&&l| l == class).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::UndefinedAuc(class));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of (1-based) mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&o| labels[o] == class).count();
        rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` where the class had no positives or no negatives.
    pub auc: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// Predictions are the per-sample argmax of `scores`.
    pub fn from_scores(scores: &[Tensor], labels: &[usize], k: usize) -> Result<Self, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
        }
        for s in scores {
            if s.len() != k {
                return Err(EvalError::OutOfRange {
                    index: s.len(),
                    num_classes: k,
                });
            }
        }
        let predictions: Vec<usize> = scores.iter().map(Tensor::argmax).collect();
        let confusion = confusion_matrix(&predictions, labels, k)?;
        let accuracy = accuracy(&predictions, labels)?;
        let auc = (0..k)
            .map(|c| {
                let col: Vec<f64> = scores.iter().map(|s| s.data()[c]).collect();
                match auc_one_vs_rest(&col, labels, c) {
                    Ok(a) => Ok(Some(a)),
                    Err(EvalError::UndefinedAuc(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(EvalReport {
            accuracy,
            auc,
            confusion,
        })
    }
}

/// One table row: a named run with accuracy and per-class AUCs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub accuracy: f64,
    pub auc: Vec<Option<f64>>,
}

impl ReportRow {
    pub fn new(name: impl Into<String>, report: &EvalReport) -> Self {
        ReportRow {
            name: name.into(),
            accuracy: report.accuracy,
            auc: report.auc.clone(),
        }
    }

    /// Accuracy as a percentage, then AUCs, two decimals each.
    pub fn cells(&self) -> Vec<String> {
        std::iter::once(format!("{:.2}", self.accuracy * 100.0))
            .chain(self.auc.iter().map(|a| match a {
                Some(v) => format!("{v:.2}"),
                None => "NA".to_string(),
            }))
            .collect()
    }

    pub fn values_line(&self) -> String {
        self.cells().join(", ")
    }
}

pub fn render_csv(rows: &[ReportRow], class_names: &[String]) -> String {
    let mut out = String::from("model,accuracy");
    for name in class_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.name);
        for cell in row.cells() {
            out.push(',');
            out.push_str(&cell);
        }
        out.push('\n');
    }
    out
}

pub fn render_text(rows: &[ReportRow], class_names: &[String]) -> String {
    let mut header = vec!["Model".to_string(), "Accuracy (%)".to_string()];
    header.extend(class_names.iter().cloned());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| std::iter::once(r.name.clone()).chain(r.cells()).collect())
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            body.iter()
                .filter_map(|r| r.get(i))
                .chain(std::iter::once(&header[i]))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}", w = widths[i]);
            } else {
                let _ = write!(out, "  {c:>w$}", w = widths[i]);
            }
        }
        out.push('\n');
    };
    line(&header, &mut out);
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for r in &body {
        line(r, &mut out);
    }
    out
}
