//! Dense NCHW tensors with hand-written forward and backward passes for the
//! handful of operations the skeleton network uses.

mod backbone;
pub mod io;
mod ops;
mod optim;

pub use backbone::{BackboneSpec, ConvSpec, PoolSpec, StageSpec};
pub use ops::{
    bilinear_upsample, bilinear_upsample_backward, concat_channels, conv2d, conv2d_backward,
    maxpool, maxpool_backward, relu, relu_backward, slice_channel, slice_channel_backward,
    Conv2dGrads, PoolIndices,
};
pub use optim::SgdMomentum;

use crate::error::{Error, Result};

/// A dense 4-D tensor laid out row-major as (batch, channels, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// A single-image, single-channel tensor from a row-major plane.
    pub fn from_plane(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_vec([1, 1, height, width], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Number of values in one (height, width) plane.
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f32) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    /// The (height × width) plane for image `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let start = self.index(n, c, 0, 0);
        &self.data[start..start + self.plane_len()]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let start = self.index(n, c, 0, 0);
        let len = self.plane_len();
        &mut self.data[start..start + len]
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "Tensor::add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn check_finite(&self, name: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(name.to_string()))
        }
    }
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub id: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Multiplier applied to the base learning rate for this parameter.
    pub lr_mult: f32,
}

impl Parameter {
    pub fn new(id: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            id: id.into(),
            value,
            grad,
            lr_mult: 1.0,
        }
    }

    pub fn with_lr_mult(mut self, mult: f32) -> Self {
        self.lr_mult = mult;
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate(&mut self, delta: &Tensor) -> Result<()> {
        self.grad.add_assign(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 2, 3, 4], vec![0.0; 24]).is_ok());
        let err = Tensor::from_vec([1, 2, 3, 4], vec![0.0; 23]).unwrap_err();
        assert!(err.to_string().contains("[1, 2, 3, 4]"));
    }

    #[test]
    fn gradient_accumulates_until_zeroed() {
        let mut p = Parameter::new("w", Tensor::full([1, 1, 2, 2], 1.0));
        let delta = Tensor::full([1, 1, 2, 2], 0.5);
        p.accumulate(&delta).unwrap();
        p.accumulate(&delta).unwrap();
        assert!(p.grad.data().iter().all(|&g| g == 1.0));
        p.zero_grad();
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(p.grad.shape(), p.value.shape());
    }
}
