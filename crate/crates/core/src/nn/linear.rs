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

#[derive(Clone, Debug)]
struct LinearCache<T> {
    /// Input as used (quantized when a quantizer is attached).
    input: Tensor<T>,
    raw_input: Option<Tensor<T>>,
    used_weights: Vec<T>,
}

/// Fully connected layer `y = x W^T + b` on `N x in` inputs.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar> {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    /// Row-major `out x in`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    pub quant: Option<LayerQuant<T>>,
    cache: Option<LinearCache<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(name: impl Into<String>, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, libm::sqrt(1.0 / in_features as f64)).expect("valid std");
        let weight = (0..in_features * out_features)
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        Linear {
            name: name.into(),
            in_features,
            out_features,
            weight,
            bias: vec![T::zero(); out_features],
            grad_weight: vec![T::zero(); in_features * out_features],
            grad_bias: vec![T::zero(); out_features],
            quant: None,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, keep_cache: bool) -> Result<Tensor<T>> {
        let (n, f) = match *input.dims() {
            [n, f] => (n, f),
            _ => bail!(InvalidShape, "{}: expected N x F input, got {:?}", self.name, input.dims()),
        };
        if f != self.in_features {
            bail!(
                InvalidShape,
                "{}: input has {} features, layer expects {}",
                self.name,
                f,
                self.in_features
            );
        }
        let (x, raw, w) = match self.quant.as_mut() {
            Some(q) => (
                q.quantize_input(input)?,
                Some(input.clone()),
                q.quantize_weights(&self.weight)?,
            ),
            None => (input.clone(), None, self.weight.clone()),
        };
        let mut out = Tensor::zeros(&[n, self.out_features]);
        for row in out.data_mut().chunks_exact_mut(self.out_features) {
            row.copy_from_slice(&self.bias);
        }
        T::gemm(
            n,
            f,
            self.out_features,
            T::one(),
            x.data(),
            f as isize,
            1,
            &w,
            1,
            f as isize,
            T::one(),
            out.data_mut(),
            self.out_features as isize,
            1,
        );
        self.cache = keep_cache.then_some(LinearCache {
            input: x,
            raw_input: raw,
            used_weights: w,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(cache) = self.cache.take() else {
            bail!(InvalidState, "{}: backward without cached forward", self.name);
        };
        let n = cache.input.dims()[0];
        if grad_out.dims() != [n, self.out_features] {
            bail!(InvalidShape, "{}: grad dims {:?}", self.name, grad_out.dims());
        }
        let (f, o) = (self.in_features, self.out_features);
        for row in grad_out.data().chunks_exact(o) {
            for (acc, &g) in self.grad_bias.iter_mut().zip(row) {
                *acc += g;
            }
        }
        // dW (o x f) = dY^T (o x n) * X (n x f)
        let mut gw = vec![T::zero(); o * f];
        T::gemm(
            o,
            n,
            f,
            T::one(),
            grad_out.data(),
            1,
            o as isize,
            cache.input.data(),
            f as isize,
            1,
            T::zero(),
            &mut gw,
            f as isize,
            1,
        );
        // dX (n x f) = dY (n x o) * W (o x f)
        let mut gx = Tensor::zeros(&[n, f]);
        T::gemm(
            n,
            o,
            f,
            T::one(),
            grad_out.data(),
            o as isize,
            1,
            &cache.used_weights,
            f as isize,
            1,
            T::zero(),
            gx.data_mut(),
            f as isize,
            1,
        );
        match self.quant.as_mut() {
            Some(q) => {
                let gw = q.backward_weights(&gw, &self.weight)?;
                for (acc, g) in self.grad_weight.iter_mut().zip(gw) {
                    *acc += g;
                }
                let raw = cache.raw_input.expect("raw input cached with quantizer");
                q.backward_input(&gx, &raw)
            }
            None => {
                for (acc, g) in self.grad_weight.iter_mut().zip(gw) {
                    *acc += g;
                }
                Ok(gx)
            }
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn visit(&mut self, v: &mut dyn TensorVisitor<T>) {
        let (o, f) = (self.out_features, self.in_features);
        v.param(
            &self.name,
            "weight",
            ParamKind::LinearWeight,
            &[o, f],
            &mut self.weight,
            &mut self.grad_weight,
        );
        v.param(
            &self.name,
            "bias",
            ParamKind::LinearBias,
            &[o],
            &mut self.bias,
            &mut self.grad_bias,
        );
        if let Some(q) = self.quant.as_mut() {
            q.visit(&self.name, v);
        }
    }
}
