//! Learned-step-size fake quantization with straight-through gradients.
//!
//! Forward: `y = clip(round(x / s), Qn, Qp) * s`.
//! Backward: `dx = dy` inside `[s*Qn, s*Qp]`, zero outside; the step
//! receives `(round(x/s) - x/s)` in range and `Qn`/`Qp` when clipped, summed
//! over the tensor and scaled by `g = 1 / sqrt(numel * Qp)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::nn::{BufferKind, ParamKind, ResNet, TensorVisitor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Steps are never allowed below this value.
pub const MIN_STEP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantKind {
    /// Signed grid `[-2^(b-1), 2^(b-1) - 1]`.
    Weight,
    /// Unsigned grid `[0, 2^b - 1]` (inputs are post-ReLU).
    Activation,
}

/// How a quantizer's first step is chosen from data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum StepInit {
    /// `2 * mean|v| * (2^(b-1) - 1)`.
    Paper,
    /// `2 * mean|v| / sqrt(Qp)`; equals `Paper` for 2-bit weights.
    #[default]
    Lsq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerState<T: Scalar> {
    pub step: T,
    pub q_neg: i32,
    pub q_pos: i32,
    pub kind: QuantKind,
    pub bits: u32,
    pub step_grad: T,
    /// False until the step has been initialised from data.
    pub calibrated: bool,
}

impl<T: Scalar> QuantizerState<T> {
    pub fn new(kind: QuantKind, bits: u32) -> Result<Self> {
        if !matches!(bits, 2 | 4 | 8) {
            bail!(InvalidArgument, "bit width must be 2, 4 or 8, got {}", bits);
        }
        let (q_neg, q_pos) = match kind {
            QuantKind::Weight => (-(1 << (bits - 1)), (1 << (bits - 1)) - 1),
            QuantKind::Activation => (0, (1 << bits) - 1),
        };
        Ok(QuantizerState {
            step: T::one(),
            q_neg,
            q_pos,
            kind,
            bits,
            step_grad: T::zero(),
            calibrated: false,
        })
    }

    pub fn with_step(mut self, step: T) -> Self {
        self.step = step.max(T::of(MIN_STEP));
        self.calibrated = true;
        self
    }

    pub fn levels(&self) -> usize {
        (self.q_pos - self.q_neg + 1) as usize
    }

    pub fn calibrate(&mut self, values: &[T], rule: StepInit) -> Result<()> {
        self.step = match rule {
            StepInit::Paper => init_step(values, self.bits)?,
            StepInit::Lsq => {
                let mean = mean_abs(values)?;
                T::of((2.0 * mean / libm::sqrt(self.q_pos as f64)).max(MIN_STEP))
            }
        };
        self.calibrated = true;
        Ok(())
    }

    /// Keep the step strictly positive after an update.
    pub fn clamp_step(&mut self) {
        self.step = self.step.max(T::of(MIN_STEP));
    }

    #[inline]
    fn quantize_one(&self, x: T) -> T {
        let level = (x / self.step)
            .round()
            .max(T::of(self.q_neg as f64))
            .min(T::of(self.q_pos as f64));
        level * self.step
    }
}

fn mean_abs<T: Scalar>(values: &[T]) -> Result<f64> {
    if values.is_empty() {
        bail!(InvalidArgument, "cannot initialise a step from an empty tensor");
    }
    Ok(values.iter().map(|v| v.abs().as_f64()).sum::<f64>() / values.len() as f64)
}

/// Step initialisation `s = 2 * mean|w| * p` with `p = 2^(bits-1) - 1`,
/// clamped to at least [`MIN_STEP`].
pub fn init_step<T: Scalar>(weights: &[T], bits: u32) -> Result<T> {
    check_bits(bits)?;
    let mean = mean_abs(weights)?;
    let p = ((1u64 << (bits - 1)) - 1) as f64;
    Ok(T::of((2.0 * mean * p).max(MIN_STEP)))
}

pub fn fake_quantize<T: Scalar>(x: &[T], q: &QuantizerState<T>) -> Result<Vec<T>> {
    if !(q.step > T::zero()) {
        bail!(InvalidState, "quantizer step must be positive");
    }
    if x.iter().any(|v| !v.is_finite()) {
        bail!(InvalidData, "non-finite value entering fake quantization");
    }
    Ok(x.iter().map(|&v| q.quantize_one(v)).collect())
}

/// Returns `(grad_x, grad_step)`.
pub fn fake_quantize_backward<T: Scalar>(
    grad_out: &[T],
    x: &[T],
    q: &QuantizerState<T>,
) -> Result<(Vec<T>, T)> {
    if grad_out.len() != x.len() {
        bail!(
            InvalidShape,
            "grad has {} values, input has {}",
            grad_out.len(),
            x.len()
        );
    }
    let (qn, qp) = (T::of(q.q_neg as f64), T::of(q.q_pos as f64));
    let mut grad_x = Vec::with_capacity(x.len());
    let mut grad_s = T::zero();
    for (&g, &v) in grad_out.iter().zip(x) {
        let scaled = v / q.step;
        if scaled <= qn {
            grad_x.push(T::zero());
            grad_s += qn * g;
        } else if scaled >= qp {
            grad_x.push(T::zero());
            grad_s += qp * g;
        } else {
            grad_x.push(g);
            grad_s += (scaled.round() - scaled) * g;
        }
    }
    let scale = T::one() / T::of(libm::sqrt(x.len() as f64 * q.q_pos as f64));
    Ok((grad_x, grad_s * scale))
}

/// Weight and input-activation quantizers attached to one conv/linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerQuant<T: Scalar> {
    pub weight: QuantizerState<T>,
    pub act: QuantizerState<T>,
    pub init_rule: StepInit,
}

impl<T: Scalar> LayerQuant<T> {
    pub fn new(bits: u32, init_rule: StepInit, weights: &[T]) -> Result<Self> {
        let mut weight = QuantizerState::new(QuantKind::Weight, bits)?;
        weight.calibrate(weights, init_rule)?;
        Ok(LayerQuant {
            weight,
            act: QuantizerState::new(QuantKind::Activation, bits)?,
            init_rule,
        })
    }

    /// Quantizes a layer input, calibrating the activation step on first use.
    pub fn quantize_input(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.act.calibrated {
            self.act.calibrate(input.data(), self.init_rule)?;
        }
        Tensor::from_vec(input.dims(), fake_quantize(input.data(), &self.act)?)
    }

    pub fn quantize_weights(&self, weights: &[T]) -> Result<Vec<T>> {
        fake_quantize(weights, &self.weight)
    }

    /// Maps the gradient w.r.t. quantized weights back to the raw weights,
    /// accumulating the weight-step gradient.
    pub fn backward_weights(&mut self, grad_q: &[T], weights: &[T]) -> Result<Vec<T>> {
        let (gx, gs) = fake_quantize_backward(grad_q, weights, &self.weight)?;
        self.weight.step_grad += gs;
        Ok(gx)
    }

    pub fn backward_input(&mut self, grad_q: &Tensor<T>, raw: &Tensor<T>) -> Result<Tensor<T>> {
        let (gx, gs) = fake_quantize_backward(grad_q.data(), raw.data(), &self.act)?;
        self.act.step_grad += gs;
        Tensor::from_vec(raw.dims(), gx)
    }

    pub(crate) fn visit(&mut self, layer: &str, v: &mut dyn TensorVisitor<T>) {
        v.param(
            layer,
            "wstep",
            ParamKind::QuantStep,
            &[1],
            core::slice::from_mut(&mut self.weight.step),
            core::slice::from_mut(&mut self.weight.step_grad),
        );
        v.param(
            layer,
            "astep",
            ParamKind::QuantStep,
            &[1],
            core::slice::from_mut(&mut self.act.step),
            core::slice::from_mut(&mut self.act.step_grad),
        );
        let mut flag = if self.act.calibrated { T::one() } else { T::zero() };
        v.buffer(
            layer,
            "acalib",
            BufferKind::Flag,
            &[1],
            core::slice::from_mut(&mut flag),
        );
        self.act.calibrated = flag > T::zero();
        self.weight.clamp_step();
        self.act.clamp_step();
    }
}

/// Attach weight and input-activation quantizers to every conv layer except
/// the stem; the stem and the classifier head stay full precision.
pub fn wrap_quantized<T: Scalar>(model: ResNet<T>, bits: u32) -> Result<ResNet<T>> {
    wrap_quantized_with(model, bits, StepInit::default())
}

pub fn wrap_quantized_with<T: Scalar>(mut model: ResNet<T>, bits: u32, rule: StepInit) -> Result<ResNet<T>> {
    if let Some(b) = model.bits {
        bail!(InvalidState, "model is already wrapped at {} bits", b);
    }
    check_bits(bits)?;
    for conv in model.convs_mut().into_iter().skip(1) {
        conv.quant = Some(LayerQuant::new(bits, rule, &conv.weight)?);
    }
    model.bits = Some(bits);
    Ok(model)
}

/// Quantized weights of every wrapped layer, keyed by layer name.
pub fn quantized_weights<T: Scalar>(model: &ResNet<T>) -> Result<Vec<(String, Vec<T>)>> {
    model
        .convs()
        .into_iter()
        .filter_map(|c| c.quant.as_ref().map(|q| (c, q)))
        .map(|(c, q)| Ok((c.name.clone(), q.quantize_weights(&c.weight)?)))
        .collect()
}

pub(crate) fn check_bits(bits: u32) -> Result<()> {
    if matches!(bits, 2 | 4 | 8) {
        Ok(())
    } else {
        Err(crate::Error::InvalidArgument(format!(
            "bit width must be 2, 4 or 8, got {}",
            bits
        )))
    }
}
