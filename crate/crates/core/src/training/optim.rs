use std::fmt;
use std::str::FromStr;

use crate::tensor::Tensor;
use crate::training::TrainError;

fn check_lr(lr: f64) -> Result<(), TrainError> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(TrainError::InvalidConfig(format!("learning rate {lr} must be positive")));
    }
    Ok(())
}

fn check_step(params: &[&mut Tensor], grads: &[Tensor], op: &'static str) -> Result<(), TrainError> {
    if params.len() != grads.len() {
        return Err(TrainError::InvalidConfig(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.check_same_shape(g, op)?;
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self, TrainError> {
        check_lr(lr)?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(TrainError::InvalidConfig(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Shapes are checked before anything is modified.
    pub fn step<'a, I>(&mut self, params: I, grads: &[Tensor]) -> Result<(), TrainError>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        check_step(&params, grads, "sgd_step")?;
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            v.check_same_shape(g, "sgd_step")?;
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(lr: f64) -> Result<Self, TrainError> {
        check_lr(lr)?;
        Ok(Adam {
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPSILON,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn step<'a, I>(&mut self, params: I, grads: &[Tensor]) -> Result<(), TrainError>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        check_step(&params, grads, "adam_step")?;
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            m.check_same_shape(g, "adam_step")?;
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((pv, &gv), mv), vv) in it {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

/// Either optimizer behind one `step`.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    /// `momentum` only applies to SGD.
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64) -> Result<Self, TrainError> {
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(lr, momentum)?),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr)?),
        })
    }

    pub fn step<'a, I>(&mut self, params: I, grads: &[Tensor]) -> Result<(), TrainError>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        match self {
            Optimizer::Sgd(o) => o.step(params, grads),
            Optimizer::Adam(o) => o.step(params, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut p = vec![Tensor::from_vec(vec![1.0, -2.0])];
        let g = vec![Tensor::from_vec(vec![0.5, 0.25])];
        Sgd::new(0.1, 0.0).unwrap().step(p.iter_mut(), &g).unwrap();
        assert_eq!(p[0].data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![Tensor::from_vec(vec![3.0, 4.0])];
        let before = p.clone();
        let mut opt = Sgd::new(0.5, 0.9).unwrap();
        for _ in 0..3 {
            opt.step(p.iter_mut(), &[Tensor::zeros(&[2])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn shape_mismatch_leaves_params_untouched() {
        let mut p = vec![Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![1.0, 2.0])];
        let g = vec![Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![1.0])];
        let mut opt = Sgd::new(0.1, 0.0).unwrap();
        assert!(opt.step(p.iter_mut(), &g).is_err());
        assert_eq!(p[0].data(), &[1.0]);
        assert!(Sgd::new(0.0, 0.5).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first update lr·sign(g) up to epsilon
        let mut p = vec![Tensor::from_vec(vec![1.0, 1.0, 1.0])];
        let g = vec![Tensor::from_vec(vec![0.3, -20.0, 0.0])];
        Adam::new(0.01).unwrap().step(p.iter_mut(), &g).unwrap();
        assert!((p[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((p[0].data()[1] - 1.01).abs() < 1e-9);
        assert_eq!(p[0].data()[2], 1.0);
    }

    #[test]
    fn optimizer_kind_text() {
        for k in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            assert_eq!(k.to_string().parse::<OptimizerKind>().unwrap(), k);
        }
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
