//! Dense row-major tensors of `f64`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
    #[error("shape {0:?} has a zero-sized dimension")]
    EmptyDimension(Vec<usize>),
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}

/// An n-dimensional array with shape metadata.
///
/// `data.len()` always equals the product of `shape`, and every dimension is
/// positive.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::EmptyDimension(shape));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Panics if any dimension is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "zero-sized dimension in {shape:?}"
        );
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("vector tensor must be non-empty")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), TensorError> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        self.check_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn check_same_shape(
        &self,
        other: &Tensor,
        op: &'static str,
    ) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::dim(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64, TensorError> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest element; the first one wins on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Element at a 3-d index `[c, i, j]`.
    pub fn at3(&self, c: usize, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(c * self.shape[1] + i) * self.shape[2] + j]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let shown = &self.data[..self.data.len().min(PREVIEW)];
        write!(f, "{shown:?}")?;
        if self.data.len() > PREVIEW {
            write!(f, " ... ({} values)", self.data.len())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 6, .. }));
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(matches!(
            Tensor::new(vec![2, 0], vec![]),
            Err(TensorError::EmptyDimension(_))
        ));
    }

    #[test]
    fn argmax_first_on_ties() {
        let t = Tensor::from_vec(vec![1.0, 3.0, 3.0, 2.0]);
        assert_eq!(t.argmax(), 1);
    }

    #[test]
    fn elementwise_shape_checked() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[4]);
        assert!(a.add(&b).is_err());
    }
}
