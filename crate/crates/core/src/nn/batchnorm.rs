//! Per-channel batch normalization over `(N, H, W)`.
//!
//! Where the normalizing statistics come from is decided by [`Normalization`]:
//! the usual train/eval behaviour, current-test-batch statistics, or the
//! frequency-aware estimate maintained by [`crate::tta::FabnLayer`].
//! Backward flows through the statistics only when they are the current
//! batch's own mean and variance.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{BufferKind, ParamKind, TensorVisitor};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tta::FabnLayer;

/// Per-channel mean and (biased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchStats<T> {
    /// Biased statistics of an `N x C x H x W` tensor over `(N, H, W)`.
    pub fn of(input: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = input.nchw()?;
        let plane = h * w;
        let count = (n * plane) as f64;
        if count == 0.0 {
            bail!(InvalidArgument, "statistics of an empty batch");
        }
        let data = input.data();
        let mut mean = Vec::with_capacity(c);
        let mut var = Vec::with_capacity(c);
        for ch in 0..c {
            let planes = (0..n).map(|i| &data[(i * c + ch) * plane..(i * c + ch + 1) * plane]);
            let sum: f64 = planes.clone().flatten().map(|v| v.as_f64()).sum();
            let mu = sum / count;
            let sq: f64 = planes
                .flatten()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum();
            mean.push(T::of(mu));
            var.push(T::of(sq / count));
        }
        Ok(BatchStats { mean, var })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Forward-pass intent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
    /// Test-time adaptation; `commit = false` replays a batch without
    /// advancing any running estimate.
    Adapt { commit: bool },
}

impl BnMode {
    fn commits(self) -> bool {
        !matches!(self, BnMode::Adapt { commit: false })
    }
}

/// Source of the statistics used to normalize.
#[derive(Clone, Debug, PartialEq)]
pub enum Normalization<T: Scalar> {
    /// Batch statistics while training, running statistics otherwise.
    Standard,
    /// Current-batch statistics; running statistics untouched. `tracked`
    /// is an EMA of the batch means, kept only for diagnostics.
    TestBatch { tracked: Vec<T>, alpha: f64 },
    FrequencyAware(FabnLayer<T>),
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    through_stats: bool,
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T: Scalar> {
    pub name: String,
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
    pub normalization: Normalization<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: 1e-5,
            momentum: 0.1,
            normalization: Normalization::Standard,
            cache: None,
        }
    }

    pub fn source_stats(&self) -> BatchStats<T> {
        BatchStats {
            mean: self.running_mean.clone(),
            var: self.running_var.clone(),
        }
    }

    /// The layer's current estimate of the target mean: the FABN low-band
    /// EMA, the tracked test-batch EMA, or the running mean.
    pub fn adapted_mean(&self) -> Vec<T> {
        match &self.normalization {
            Normalization::Standard => self.running_mean.clone(),
            Normalization::TestBatch { tracked, .. } => tracked.clone(),
            Normalization::FrequencyAware(f) => f.mu_lfc.clone(),
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: BnMode, keep_cache: bool) -> Result<Tensor<T>> {
        let (n, c, h, w) = input.nchw()?;
        if c != self.channels {
            bail!(
                InvalidShape,
                "{}: input has {} channels, layer expects {}",
                self.name,
                c,
                self.channels
            );
        }
        if n * h * w == 0 {
            bail!(InvalidArgument, "{}: empty batch", self.name);
        }
        let commit = mode.commits();
        let (stats, through_stats) = match (&mut self.normalization, mode) {
            (Normalization::Standard, BnMode::Train) => {
                if n * h * w < 2 {
                    bail!(
                        InvalidArgument,
                        "{}: training needs at least 2 values per channel",
                        self.name
                    );
                }
                let stats = BatchStats::of(input)?;
                let m = T::of(self.momentum);
                for ch in 0..c {
                    self.running_mean[ch] =
                        (T::one() - m) * self.running_mean[ch] + m * stats.mean[ch];
                    self.running_var[ch] = (T::one() - m) * self.running_var[ch] + m * stats.var[ch];
                }
                (stats, true)
            }
            (Normalization::Standard, _) => (self.source_stats(), false),
            (Normalization::TestBatch { tracked, alpha }, _) => {
                let stats = BatchStats::of(input)?;
                if commit {
                    let a = T::of(*alpha);
                    for (t, &m) in tracked.iter_mut().zip(&stats.mean) {
                        *t = (T::one() - a) * *t + a * m;
                    }
                }
                (stats, true)
            }
            (Normalization::FrequencyAware(fabn), _) => (fabn.forward_stats(input, commit)?, false),
        };
        let eps = T::of(self.eps);
        let inv_std: Vec<T> = stats
            .var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let plane = h * w;
        let mut xhat = Tensor::zeros(input.dims());
        let mut out = Tensor::zeros(input.dims());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let (mu, is, g, b) = (stats.mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
                let src = &input.data()[off..off + plane];
                let xh = &mut xhat.data_mut()[off..off + plane];
                for (d, &x) in xh.iter_mut().zip(src) {
                    *d = (x - mu) * is;
                }
                for (o, &v) in out.data_mut()[off..off + plane].iter_mut().zip(xh.iter()) {
                    *o = g * v + b;
                }
            }
        }
        self.cache = if keep_cache {
            Some(BnCache {
                xhat,
                inv_std,
                through_stats,
            })
        } else {
            None
        };
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(cache) = self.cache.take() else {
            bail!(InvalidState, "{}: backward without cached forward", self.name);
        };
        if grad_out.dims() != cache.xhat.dims() {
            bail!(InvalidShape, "{}: grad dims mismatch", self.name);
        }
        let (n, c, h, w) = grad_out.nchw()?;
        let plane = h * w;
        let count = T::of((n * plane) as f64);
        let mut grad_in = Tensor::zeros(grad_out.dims());
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for (&dy, &xh) in grad_out.data()[off..off + plane]
                    .iter()
                    .zip(&cache.xhat.data()[off..off + plane])
                {
                    sum_dy += dy;
                    sum_dy_xhat += dy * xh;
                }
            }
            self.grad_gamma[ch] += sum_dy_xhat;
            self.grad_beta[ch] += sum_dy;
            let g = self.gamma[ch];
            let is = cache.inv_std[ch];
            for i in 0..n {
                let off = (i * c + ch) * plane;
                let dst = &mut grad_in.data_mut()[off..off + plane];
                let dy = &grad_out.data()[off..off + plane];
                let xh = &cache.xhat.data()[off..off + plane];
                if cache.through_stats {
                    let k = g * is / count;
                    for ((d, &dyv), &xhv) in dst.iter_mut().zip(dy).zip(xh) {
                        *d = k * (count * dyv - sum_dy - xhv * sum_dy_xhat);
                    }
                } else {
                    for (d, &dyv) in dst.iter_mut().zip(dy) {
                        *d = g * is * dyv;
                    }
                }
            }
        }
        Ok(grad_in)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn visit(&mut self, v: &mut dyn TensorVisitor<T>) {
        let dims = [self.channels];
        v.param(
            &self.name,
            "gamma",
            ParamKind::BnGamma,
            &dims,
            &mut self.gamma,
            &mut self.grad_gamma,
        );
        v.param(
            &self.name,
            "beta",
            ParamKind::BnBeta,
            &dims,
            &mut self.beta,
            &mut self.grad_beta,
        );
        v.buffer(
            &self.name,
            "running_mean",
            BufferKind::RunningMean,
            &dims,
            &mut self.running_mean,
        );
        v.buffer(
            &self.name,
            "running_var",
            BufferKind::RunningVar,
            &dims,
            &mut self.running_var,
        );
    }
}

/// Functional form: normalize `input` with `layer` in `mode`, caching for backward.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    layer: &mut BatchNorm<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    layer.forward(input, mode, true)
}

pub fn batchnorm_backward<T: Scalar>(layer: &mut BatchNorm<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    layer.backward(grad_out)
}
