//! Central finite differences, used as an independent check on [`Tape`]
//! gradients.
//!
//! [`Tape`]: crate::autodiff::Tape

use crate::tensor::{Tensor, TensorError};

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor, TensorError>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(TensorError::arg("finite_difference_gradient", format!("step h = {h} must be positive")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Elementwise relative error `|a − b| / max(|a|, |b|, floor)`, maximised
/// over all entries.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> Result<f64, TensorError> {
    a.check_same_shape(b, "max_relative_error")?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let g = finite_difference_gradient(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function() {
        let x = Tensor::from_vec(vec![3.0, -1.0, 0.5]);
        let g = finite_difference_gradient(|_| 42.0, &x, 1e-3).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonpositive_step_rejected() {
        let x = Tensor::from_vec(vec![1.0]);
        assert!(finite_difference_gradient(|_| 0.0, &x, 0.0).is_err());
        assert!(finite_difference_gradient(|_| 0.0, &x, f64::NAN).is_err());
    }
}
