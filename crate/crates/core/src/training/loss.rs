use crate::tensor::Tensor;
use crate::training::TrainError;

/// Scores are clamped to `[ε, 1−ε]` before taking logs.
pub const SCORE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; num_classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Inverse-frequency weights `N / (K · N_c)`.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights, TrainError> {
    if counts.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(TrainError::MissingClass(c));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len();
    Ok(ClassWeights {
        weights: counts
            .iter()
            .map(|&n| total as f64 / (k as f64 * n as f64))
            .collect(),
    })
}

fn check(scores: &Tensor, target: usize, w: &ClassWeights) -> Result<(), TrainError> {
    if scores.len() != w.len() {
        return Err(TrainError::InvalidConfig(format!(
            "{} scores for {} class weights",
            scores.len(),
            w.len()
        )));
    }
    if target >= scores.len() {
        return Err(TrainError::InvalidLabel {
            index: 0,
            label: target,
            num_classes: scores.len(),
        });
    }
    Ok(())
}

/// Multiplier of class `c`'s binary term: the target's class weight for the
/// target, 1 for every other class.
fn term_weight(c: usize, target: usize, w: &ClassWeights) -> f64 {
    if c == target {
        w.weights[target]
    } else {
        1.0
    }
}

/// One-vs-all weighted binary cross-entropy over post-sigmoid scores.
pub fn weighted_loss(scores: &Tensor, target: usize, w: &ClassWeights) -> Result<f64, TrainError> {
    check(scores, target, w)?;
    let mut loss = 0.0;
    for (c, &s) in scores.data().iter().enumerate() {
        let s = s.clamp(SCORE_EPSILON, 1.0 - SCORE_EPSILON);
        let term = if c == target { s.ln() } else { (1.0 - s).ln() };
        loss -= term_weight(c, target, w) * term;
    }
    Ok(loss)
}

pub fn unweighted_loss(scores: &Tensor, target: usize) -> Result<f64, TrainError> {
    weighted_loss(scores, target, &ClassWeights::uniform(scores.len()))
}

/// Gradient with respect to the scores; zero where the clamp is active.
pub fn weighted_loss_score_grad(scores: &Tensor, target: usize, w: &ClassWeights) -> Result<Tensor, TrainError> {
    check(scores, target, w)?;
    let g = scores
        .data()
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            if !(SCORE_EPSILON..=1.0 - SCORE_EPSILON).contains(&s) {
                return 0.0;
            }
            let m = term_weight(c, target, w);
            if c == target {
                -m / s
            } else {
                m / (1.0 - s)
            }
        })
        .collect();
    Ok(Tensor::new(scores.shape().to_vec(), g)?)
}

/// Gradient with respect to the pre-sigmoid logits, `m_c·(s_c − t_c)`.
pub fn weighted_loss_logit_grad(scores: &Tensor, target: usize, w: &ClassWeights) -> Result<Tensor, TrainError> {
    check(scores, target, w)?;
    let g = scores
        .data()
        .iter()
        .enumerate()
        .map(|(c, &s)| term_weight(c, target, w) * (s - if c == target { 1.0 } else { 0.0 }))
        .collect();
    Ok(Tensor::new(scores.shape().to_vec(), g)?)
}
