//! SGD with momentum, Adam, and per-epoch learning-rate schedules.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{BufferKind, ParamKind, ResNet, TensorVisitor};
use crate::quant::MIN_STEP;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum UpdateRule {
    Sgd(SgdConfig),
    Adam(AdamConfig),
}

impl UpdateRule {
    pub fn lr(&self) -> f64 {
        match self {
            UpdateRule::Sgd(c) => c.lr,
            UpdateRule::Adam(c) => c.lr,
        }
    }

    fn weight_decay(&self) -> f64 {
        match self {
            UpdateRule::Sgd(c) => c.weight_decay,
            UpdateRule::Adam(c) => c.weight_decay,
        }
    }
}

/// Per-tensor optimizer memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotState<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub steps: u64,
}

/// `v <- m v + g + wd p;  p <- p - lr v`.
pub fn sgd_update<T: Scalar>(params: &mut [T], grads: &[T], state: &mut SlotState<T>, cfg: &SgdConfig, lr: f64, wd: f64) {
    if state.first.len() != params.len() {
        state.first = vec![T::zero(); params.len()];
    }
    let (m, lr, wd) = (T::of(cfg.momentum), T::of(lr), T::of(wd));
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(state.first.iter_mut()) {
        *v = m * *v + g + wd * *p;
        *p -= lr * *v;
    }
    state.steps += 1;
}

/// Bias-corrected Adam step.
pub fn adam_update<T: Scalar>(params: &mut [T], grads: &[T], state: &mut SlotState<T>, cfg: &AdamConfig, lr: f64, wd: f64) {
    if state.first.len() != params.len() {
        state.first = vec![T::zero(); params.len()];
        state.second = vec![T::zero(); params.len()];
    }
    state.steps += 1;
    let t = state.steps as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - libm::pow(cfg.beta1, t as f64));
    let c2 = T::of(1.0 - libm::pow(cfg.beta2, t as f64));
    let (lr, eps, wd) = (T::of(lr), T::of(cfg.eps), T::of(wd));
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let g = g + wd * *p;
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Which parameters an optimizer may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamFilter {
    All,
    /// BN scale and shift only (entropy-minimisation adaptation).
    BnAffine,
}

impl ParamFilter {
    fn admits(self, kind: ParamKind) -> bool {
        match self {
            ParamFilter::All => true,
            ParamFilter::BnAffine => kind.is_bn_affine(),
        }
    }
}

/// Stateful optimizer over a model's parameters, addressed by visit order.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub rule: UpdateRule,
    pub filter: ParamFilter,
    /// Current learning rate (a schedule may change it between epochs).
    pub lr: f64,
    slots: Vec<SlotState<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(rule: UpdateRule, filter: ParamFilter) -> Self {
        Optimizer {
            lr: rule.lr(),
            rule,
            filter,
            slots: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.slots.clear();
    }

    /// Apply one update from the gradients currently stored in the model.
    ///
    /// Weight decay skips BN affine parameters and quantizer steps; steps are
    /// clamped to stay positive. Fails without touching anything when an
    /// admitted gradient is non-finite.
    pub fn step(&mut self, model: &mut ResNet<T>) -> Result<()> {
        struct CheckGrads {
            filter: ParamFilter,
            bad: Option<String>,
        }
        impl<T: Scalar> TensorVisitor<T> for CheckGrads {
            fn param(&mut self, layer: &str, field: &str, kind: ParamKind, _: &[usize], _: &mut [T], grad: &mut [T]) {
                if self.bad.is_none() && self.filter.admits(kind) && grad.iter().any(|g| !g.is_finite()) {
                    self.bad = Some(format!("{layer}.{field}"));
                }
            }
            fn buffer(&mut self, _: &str, _: &str, _: BufferKind, _: &[usize], _: &mut [T]) {}
        }
        let mut check = CheckGrads {
            filter: self.filter,
            bad: None,
        };
        model.visit(&mut check);
        if let Some(layer) = check.bad {
            return Err(Error::NonFinite {
                layer,
                detail: String::from("gradient"),
            });
        }

        struct Apply<'a, T> {
            opt: &'a mut Optimizer<T>,
            index: usize,
        }
        impl<T: Scalar> TensorVisitor<T> for Apply<'_, T> {
            fn param(&mut self, _: &str, _: &str, kind: ParamKind, _: &[usize], value: &mut [T], grad: &mut [T]) {
                let i = self.index;
                self.index += 1;
                if !self.opt.filter.admits(kind) {
                    return;
                }
                if self.opt.slots.len() <= i {
                    self.opt.slots.resize_with(i + 1, SlotState::default);
                }
                let wd = if kind.takes_weight_decay() {
                    self.opt.rule.weight_decay()
                } else {
                    0.0
                };
                let lr = self.opt.lr;
                let slot = &mut self.opt.slots[i];
                match &self.opt.rule {
                    UpdateRule::Sgd(c) => sgd_update(value, grad, slot, c, lr, wd),
                    UpdateRule::Adam(c) => adam_update(value, grad, slot, c, lr, wd),
                }
                if kind == ParamKind::QuantStep {
                    for v in value.iter_mut() {
                        *v = v.max(T::of(MIN_STEP));
                    }
                }
            }
            fn buffer(&mut self, _: &str, _: &str, _: BufferKind, _: &[usize], _: &mut [T]) {}
        }
        model.visit(&mut Apply { opt: self, index: 0 });
        Ok(())
    }
}

/// Per-epoch learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum LrSchedule {
    Constant,
    Step { step_size: usize, gamma: f64 },
    MultiStep { milestones: Vec<usize>, gamma: f64 },
    Cosine { t_max: usize, eta_min: f64 },
}

impl LrSchedule {
    /// Learning rate for zero-based `epoch`.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Step { step_size, gamma } => {
                base * libm::pow(*gamma, (epoch / (*step_size).max(1)) as f64)
            }
            LrSchedule::MultiStep { milestones, gamma } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                base * libm::pow(*gamma, passed as f64)
            }
            LrSchedule::Cosine { t_max, eta_min } => {
                let t = epoch.min(*t_max) as f64;
                let t_max = (*t_max).max(1) as f64;
                eta_min + (base - eta_min) * (1.0 + libm::cos(core::f64::consts::PI * t / t_max)) / 2.0
            }
        }
    }
}
