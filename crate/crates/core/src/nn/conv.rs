//! 2D convolution (cross-correlation) via im2col and GEMM.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ParamKind, TensorVisitor};
use crate::error::{bail, Result};
use crate::quant::LayerQuant;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    pub fn out_hw(&self) -> Result<(usize, usize)> {
        let (h, w, k) = (self.in_h + 2 * self.pad, self.in_w + 2 * self.pad, self.kernel);
        if self.stride == 0 || k == 0 || h < k || w < k {
            bail!(
                InvalidShape,
                "kernel {} stride {} does not fit input {}x{} (pad {})",
                k,
                self.stride,
                self.in_h,
                self.in_w,
                self.pad
            );
        }
        Ok(((h - k) / self.stride + 1, (w - k) / self.stride + 1))
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unfold one `C x H x W` sample into a `(C*k*k) x (H'*W')` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, out_h: usize, out_w: usize, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride as isize, g.pad as isize);
    let plane = out_h * out_w;
    for c in 0..g.in_channels {
        let src = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..out_h {
                    let iy = oy as isize * s + ki as isize - p;
                    let line = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let base = iy as usize * g.in_w;
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[base + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column-gradient matrix back onto a `C x H x W` sample (accumulating).
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, out_h: usize, out_w: usize, dx: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride as isize, g.pad as isize);
    let plane = out_h * out_w;
    for c in 0..g.in_channels {
        let dst = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..out_h {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let base = iy as usize * g.in_w;
                    for ox in 0..out_w {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[base + ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(ConvGeometry, usize, usize)> {
    let (_, c, h, w) = input.nchw()?;
    let (o, wc, kh, kw) = weights.nchw()?;
    if wc != c {
        bail!(
            InvalidShape,
            "input has {} channels, weights expect {}",
            c,
            wc
        );
    }
    if kh != kw {
        bail!(InvalidShape, "non-square kernel {}x{}", kh, kw);
    }
    let g = ConvGeometry {
        in_channels: c,
        kernel: kh,
        stride,
        pad,
        in_h: h,
        in_w: w,
    };
    g.out_hw()?;
    Ok((g, o, kh))
}

fn forward_cols<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    out_channels: usize,
    g: &ConvGeometry,
    keep_cols: bool,
) -> Result<(Tensor<T>, Vec<T>)> {
    let n = input.dims()[0];
    let (out_h, out_w) = g.out_hw()?;
    let (rows, plane) = (g.col_rows(), out_h * out_w);
    let mut out = Tensor::zeros(&[n, out_channels, out_h, out_w]);
    let mut all_cols = if keep_cols {
        vec![T::zero(); n * rows * plane]
    } else {
        Vec::new()
    };
    let mut scratch = if keep_cols {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane]
    };
    for i in 0..n {
        let cols: &mut [T] = if keep_cols {
            &mut all_cols[i * rows * plane..(i + 1) * rows * plane]
        } else {
            &mut scratch
        };
        im2col(input.sample(i), g, out_h, out_w, cols);
        T::gemm(
            out_channels,
            rows,
            plane,
            T::one(),
            weights,
            rows as isize,
            1,
            cols,
            plane as isize,
            1,
            T::zero(),
            out.sample_mut(i),
            plane as isize,
            1,
        );
    }
    Ok((out, all_cols))
}

/// Gradients w.r.t. input and weights given the cached column matrices.
fn backward_cols<T: Scalar>(
    grad_out: &Tensor<T>,
    weights: &[T],
    out_channels: usize,
    g: &ConvGeometry,
    cols: &[T],
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Vec<T>)> {
    let n = grad_out.dims()[0];
    let (out_h, out_w) = g.out_hw()?;
    let (rows, plane) = (g.col_rows(), out_h * out_w);
    if grad_out.dims() != [n, out_channels, out_h, out_w] {
        bail!(
            InvalidShape,
            "conv grad_out dims {:?} do not match output",
            grad_out.dims()
        );
    }
    let mut grad_w = vec![T::zero(); out_channels * rows];
    let mut grad_in = if need_input_grad {
        Some(Tensor::zeros(&[n, g.in_channels, g.in_h, g.in_w]))
    } else {
        None
    };
    let mut dcols = vec![T::zero(); rows * plane];
    for i in 0..n {
        let dy = grad_out.sample(i);
        let c = &cols[i * rows * plane..(i + 1) * rows * plane];
        // dW += dY (O x P) * cols^T (P x K)
        T::gemm(
            out_channels,
            plane,
            rows,
            T::one(),
            dy,
            plane as isize,
            1,
            c,
            1,
            plane as isize,
            T::one(),
            &mut grad_w,
            rows as isize,
            1,
        );
        if let Some(gi) = grad_in.as_mut() {
            // dcols = W^T (K x O) * dY (O x P)
            T::gemm(
                rows,
                out_channels,
                plane,
                T::one(),
                weights,
                1,
                rows as isize,
                dy,
                plane as isize,
                1,
                T::zero(),
                &mut dcols,
                plane as isize,
                1,
            );
            col2im(&dcols, g, out_h, out_w, gi.sample_mut(i));
        }
    }
    Ok((grad_in, grad_w))
}

/// Direct cross-correlation of `N x C x H x W` input with `O x C x k x k` weights.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (g, o, _) = geometry(input, weights, stride, pad)?;
    Ok(forward_cols(input, weights.data(), o, &g, false)?.0)
}

/// Returns `(grad_input, grad_weights)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (g, o, _) = geometry(input, weights, stride, pad)?;
    let (_, cols) = forward_cols(input, weights.data(), o, &g, true)?;
    let (gi, gw) = backward_cols(grad_out, weights.data(), o, &g, &cols, true)?;
    Ok((
        gi.expect("input grad requested"),
        Tensor::from_vec(weights.dims(), gw)?,
    ))
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    geometry: ConvGeometry,
    batch: usize,
    cols: Vec<T>,
    /// Weights as used in the forward pass (quantized when a quantizer is attached).
    used_weights: Vec<T>,
    /// Pre-quantization input, kept only when an activation quantizer is attached.
    raw_input: Option<Tensor<T>>,
}

/// Convolution layer with optional fake quantization of weights and input.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar> {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<T>,
    pub grad: Vec<T>,
    pub quant: Option<LayerQuant<T>>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal initialisation (`std = sqrt(2 / fan_in)`).
    pub fn new<R: Rng>(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in)).expect("valid std");
        let len = out_channels * in_channels * kernel * kernel;
        let weight = (0..len).map(|_| T::of(normal.sample(rng))).collect();
        Conv2d {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight,
            grad: vec![T::zero(); len],
            quant: None,
            cache: None,
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn forward(&mut self, input: &Tensor<T>, keep_cache: bool) -> Result<Tensor<T>> {
        let (n, c, h, w) = input.nchw()?;
        if c != self.in_channels {
            bail!(
                InvalidShape,
                "{}: input has {} channels, layer expects {}",
                self.name,
                c,
                self.in_channels
            );
        }
        let g = ConvGeometry {
            in_channels: c,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            in_h: h,
            in_w: w,
        };
        let (x, raw_input, used_weights) = match self.quant.as_mut() {
            Some(q) => {
                let xq = q.quantize_input(input)?;
                let wq = q.quantize_weights(&self.weight)?;
                (xq, Some(input.clone()), wq)
            }
            None => (input.clone(), None, self.weight.clone()),
        };
        let (out, cols) = forward_cols(&x, &used_weights, self.out_channels, &g, keep_cache)?;
        self.cache = if keep_cache {
            Some(ConvCache {
                geometry: g,
                batch: n,
                cols,
                used_weights,
                raw_input,
            })
        } else {
            None
        };
        Ok(out)
    }

    /// Accumulates weight (and quantizer step) gradients; returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(cache) = self.cache.take() else {
            bail!(InvalidState, "{}: backward without cached forward", self.name);
        };
        if grad_out.dims().first() != Some(&cache.batch) {
            bail!(InvalidShape, "{}: grad batch mismatch", self.name);
        }
        let (gi, gw) = backward_cols(
            grad_out,
            &cache.used_weights,
            self.out_channels,
            &cache.geometry,
            &cache.cols,
            true,
        )?;
        let mut gi = gi.expect("input grad requested");
        match self.quant.as_mut() {
            Some(q) => {
                let gw = q.backward_weights(&gw, &self.weight)?;
                for (acc, g) in self.grad.iter_mut().zip(gw) {
                    *acc += g;
                }
                let raw = cache.raw_input.expect("raw input cached with quantizer");
                gi = q.backward_input(&gi, &raw)?;
            }
            None => {
                for (acc, g) in self.grad.iter_mut().zip(gw) {
                    *acc += g;
                }
            }
        }
        Ok(gi)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn visit(&mut self, v: &mut dyn TensorVisitor<T>) {
        let dims = self.weight_dims();
        v.param(
            &self.name,
            "weight",
            ParamKind::ConvWeight,
            &dims,
            &mut self.weight,
            &mut self.grad,
        );
        if let Some(q) = self.quant.as_mut() {
            q.visit(&self.name, v);
        }
    }
}
