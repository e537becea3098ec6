use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{check_same_dims, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Gradient of ReLU given its forward input.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_dims(grad_out, input, "relu backward")?;
    let data: Vec<T> = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.dims(), data)
}

pub fn residual_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_dims(a, b, "residual add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.dims(), data)
}

/// `N x C x H x W` -> `N x C`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.nchw()?;
    let plane = h * w;
    if plane == 0 {
        bail!(InvalidShape, "pooling over an empty plane");
    }
    let inv = T::one() / T::of(plane as f64);
    let data = input
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, input_dims: &[usize]) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *input_dims {
        [n, c, h, w] => (n, c, h, w),
        _ => bail!(InvalidShape, "pool input dims {:?}", input_dims),
    };
    if grad_out.dims() != [n, c] {
        bail!(InvalidShape, "pool grad dims {:?}", grad_out.dims());
    }
    let plane = h * w;
    let inv = T::one() / T::of(plane as f64);
    let mut out = Tensor::zeros(input_dims);
    for (dst, &g) in out.data_mut().chunks_exact_mut(plane).zip(grad_out.data()) {
        dst.fill(g * inv);
    }
    Ok(out)
}
