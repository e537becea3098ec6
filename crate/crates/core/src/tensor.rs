//! Dense row-major tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            bail!(
                InvalidShape,
                "dims {:?} need {} values, got {}",
                dims,
                len,
                data.len()
            );
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            bail!(
                InvalidShape,
                "cannot reshape {:?} into {:?}",
                self.dims,
                dims
            );
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Dimensions as `(n, c, h, w)`; fails unless rank is 4.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.dims.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => bail!(InvalidShape, "expected N x C x H x W, got {:?}", self.dims),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Borrow sample `i` along the leading axis.
    pub fn sample(&self, i: usize) -> &[T] {
        let stride = self.sample_len();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let stride = self.sample_len();
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn sample_len(&self) -> usize {
        self.dims.iter().skip(1).product()
    }

    /// Gather the given leading-axis indices into a new tensor.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let stride = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut dims = self.dims.clone();
        dims[0] = indices.len();
        Tensor { dims, data }
    }

    /// Contiguous leading-axis slice `[start, end)`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let stride = self.sample_len();
        let mut dims = self.dims.clone();
        dims[0] = end - start;
        Tensor {
            dims,
            data: self.data[start * stride..end * stride].to_vec(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

pub(crate) fn check_same_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        bail!(
            InvalidShape,
            "{}: dims {:?} and {:?} differ",
            what,
            a.dims(),
            b.dims()
        );
    }
    Ok(())
}
