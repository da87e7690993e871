//! Dense row-major tensors.
//!
//! Values are `f64` in memory for numerically trustworthy training and
//! finite-difference checks; the on-disk formats (datasets, checkpoints)
//! serialize little-endian `f32`, converted at the I/O boundary.

use super::AdError;

/// A dense row-major array. Graph operations interpret tensors as matrices
/// (`[rows, cols]`); a scalar is `[1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Creates a tensor, validating that `data` matches `shape`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AdError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AdError::Shape {
                op: "new",
                detail: format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Like [`Tensor::new`] but additionally rejects NaN/Inf values.
    pub fn checked(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AdError> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(AdError::NonFinite {
                op: "checked",
                detail: format!("input value {v}"),
            });
        }
        Self::new(shape, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    /// 1 x n row vector.
    pub fn row(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// rows x cols matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AdError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the shape as `(rows, cols)`; errors on other ranks.
    pub fn dims2(&self) -> Result<(usize, usize), AdError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(AdError::Shape {
                op: "dims2",
                detail: format!("expected rank-2 tensor, got shape {:?}", other),
            }),
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.dims2().expect("at() on non-matrix");
        self.data[row * c + col]
    }

    /// The single value of a `[1, 1]` tensor.
    pub fn scalar_value(&self) -> Result<f64, AdError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(AdError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn checked_rejects_nan() {
        assert!(Tensor::checked(vec![1, 2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::checked(vec![1, 2], vec![1.0, f64::INFINITY]).is_err());
        assert!(Tensor::checked(vec![1, 2], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn scalar_value() {
        assert_eq!(Tensor::scalar(4.0).scalar_value().unwrap(), 4.0);
        assert!(Tensor::zeros(2, 2).scalar_value().is_err());
    }
}
