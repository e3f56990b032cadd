//! Dense row-major tensors.
//!
//! Activations use NCHW layout, conv weights OIHW. There is no view or
//! stride machinery; every operation produces a fresh contiguous tensor.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array, contiguous row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// All-zero tensor. Panics if any extent is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let len = checked_len(shape);
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Wrap existing data; the element count must match the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("all extents must be >= 1, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = checked_len(shape);
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({len} elements)",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Offset of element (n, c) in a rank-2 tensor.
    #[inline]
    pub fn at2(&self, n: usize, c: usize) -> S {
        debug_assert_eq!(self.rank(), 2);
        self.data[n * self.shape[1] + c]
    }

    /// Offset of element (n, c, h, w) in a rank-4 tensor.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        debug_assert_eq!(self.rank(), 4);
        let (_, cs, hs, ws) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    /// Maximum absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn checked_len(shape: &[usize]) -> usize {
    assert!(
        !shape.is_empty() && shape.iter().all(|&e| e >= 1),
        "all tensor extents must be >= 1, got {shape:?}"
    );
    shape.iter().product()
}

/// A mini-batch of images with integer class labels.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    pub images: Tensor<S>,
    pub labels: Vec<u16>,
}

impl<S: Scalar> Batch<S> {
    pub fn new(images: Tensor<S>, labels: Vec<u16>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Shape(format!(
                "batch images must be rank 4 (N,C,H,W), got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "batch of {} images has {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        Ok(Batch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    fn from_vec_rejects_zero_extent() {
        let err = Tensor::<f32>::from_vec(&[2, 0], vec![]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = t.reshape(&[4]).unwrap();
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(Tensor::<f64>::zeros(&[4]).reshape(&[3]).is_err());
    }

    #[test]
    fn batch_label_count_must_match() {
        let images = Tensor::<f32>::zeros(&[2, 1, 4, 4]);
        assert!(Batch::new(images.clone(), vec![0]).is_err());
        assert!(Batch::new(images, vec![0, 1]).is_ok());
    }
}
