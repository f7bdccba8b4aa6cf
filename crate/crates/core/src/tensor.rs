use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Tensor dimensions, always `(batch, channels, height, width)`.
pub type Dims = [usize; 4];

/// Dense rank-4 tensor, row-major in `(batch, channels, height, width)` order.
///
/// The flattening order is part of the on-disk checkpoint contract and of the
/// fully-connected input layout, so it must not change.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Dims,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor { dims, values: vec![T::zero(); dims.iter().product()], grad: None }
    }

    pub fn filled(dims: Dims, v: T) -> Self {
        Tensor { dims, values: vec![v; dims.iter().product()], grad: None }
    }

    /// Takes ownership of `values`; fails unless the length matches the shape.
    pub fn from_vec(dims: Dims, values: Vec<T>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if values.len() != expect {
            return Err(Error::Shape(format!(
                "tensor {:?} needs {} values, got {}",
                dims,
                expect,
                values.len()
            )));
        }
        Ok(Tensor { dims, values, grad: None })
    }

    /// Gaussian-filled tensor with mean 0 and the given standard deviation.
    /// Samples are drawn at 64-bit precision and narrowed, so the same seed
    /// produces the same tensor (up to rounding) at every precision.
    pub fn randn<R: Rng>(dims: Dims, std: f64, rng: &mut R) -> Self {
        let n: usize = dims.iter().product();
        let values = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::real(z * std)
            })
            .collect();
        Tensor { dims, values, grad: None }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(b < self.dims[0] && c < self.dims[1] && h < self.dims[2] && w < self.dims[3]);
        ((b * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.values[self.offset(b, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, h: usize, w: usize) -> &mut T {
        let i = self.offset(b, c, h, w);
        &mut self.values[i]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// One sample's contiguous slice of all channel planes.
    pub fn sample(&self, b: usize) -> &[T] {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        &self.values[b * per..(b + 1) * per]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.values[b * per..(b + 1) * per]
    }

    /// Errors if any value is NaN or infinite. `what` names the tensor in the message.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value in {what}")))
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Attaches a gradient buffer; its length must match the value buffer.
    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "gradient length {} does not match tensor length {}",
                grad.len(),
                self.values.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Re-express the same values at another precision. Gradients are dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            values: self.values.iter().map(|v| U::real(v.widen())).collect(),
            grad: None,
        }
    }
}
