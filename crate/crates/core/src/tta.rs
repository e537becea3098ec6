//! Streaming test-time adaptation: NORM, TENT, SAR, frequency-aware BN
//! (FABN) and the FABN+TENT / FABN+SAR hybrids.
//!
//! FABN splits every BN input plane into a low band (holding DC) and a high
//! band. Low-band statistics start at the source running statistics and
//! follow an EMA; high-band statistics come from the current batch; the sum
//! normalizes the full feature.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::nn::{entropy_loss, BatchNorm, BnMode, BufferKind, Normalization, ParamKind, ResNet, TensorVisitor};
use crate::optim::{AdamConfig, Optimizer, ParamFilter, SgdConfig, UpdateRule};
use crate::scalar::Scalar;
use crate::spectral::{scaled_radius, BandSplitter};
use crate::tensor::Tensor;

pub use crate::nn::BatchStats;

/// How a BN layer picks its band radius.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum RadiusRule {
    /// `scaled_radius(fraction, min(H, W))`.
    Fraction(f64),
    /// The same absolute radius at every resolution.
    Absolute(f64),
}

impl RadiusRule {
    /// Fraction rule from a training radius at a given input size.
    pub fn from_training(radius: f64, input_size: usize) -> Result<Self> {
        if input_size == 0 || !(radius > 0.0) {
            bail!(InvalidArgument, "training radius and input size must be positive");
        }
        Ok(RadiusRule::Fraction((radius / input_size as f64).min(1.0)))
    }

    pub fn resolve(self, height: usize, width: usize) -> Result<f64> {
        match self {
            RadiusRule::Fraction(f) => scaled_radius(f, height.min(width)),
            RadiusRule::Absolute(r) => {
                if !(r >= 0.0) || !r.is_finite() {
                    bail!(InvalidArgument, "absolute radius must be finite and >= 0, got {}", r);
                }
                Ok(r)
            }
        }
    }
}

/// Batch statistics of the two bands for the most recent batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BandStats<T = f32> {
    pub lfc: BatchStats<T>,
    pub hfc: BatchStats<T>,
}

/// Per-layer FABN state.
#[derive(Clone, Debug, PartialEq)]
pub struct FabnLayer<T: Scalar> {
    pub mu_lfc: Vec<T>,
    pub var_lfc: Vec<T>,
    pub alpha: f64,
    pub radius: RadiusRule,
    /// Committed batches so far.
    pub steps: u64,
    pub last: Option<BandStats<T>>,
}

impl<T: Scalar> FabnLayer<T> {
    /// Start from the layer's source running statistics.
    pub fn from_source(layer: &BatchNorm<T>, alpha: f64, radius: RadiusRule) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            bail!(InvalidArgument, "alpha must lie in [0, 1], got {}", alpha);
        }
        Ok(FabnLayer {
            mu_lfc: layer.running_mean.clone(),
            var_lfc: layer.running_var.clone(),
            alpha,
            radius,
            steps: 0,
            last: None,
        })
    }

    /// Band statistics of `input` (N x C x H x W), unchanged state.
    pub fn band_stats(&self, input: &Tensor<T>) -> Result<BandStats<T>> {
        let (n, c, h, w) = input.nchw()?;
        if n * h * w == 0 {
            bail!(InvalidArgument, "empty batch");
        }
        if c != self.mu_lfc.len() {
            bail!(
                InvalidShape,
                "input has {} channels, state holds {}",
                c,
                self.mu_lfc.len()
            );
        }
        if !input.all_finite() {
            bail!(InvalidData, "non-finite feature values");
        }
        let splitter = BandSplitter::new(h, w, self.radius.resolve(h, w)?)?;
        let plane = h * w;
        if splitter.mask().low_count() == plane {
            return Ok(BandStats {
                lfc: BatchStats::of(input)?,
                hfc: BatchStats {
                    mean: vec![T::zero(); c],
                    var: vec![T::zero(); c],
                },
            });
        }
        let mut lfc = Tensor::zeros(input.dims());
        let mut hfc = Tensor::zeros(input.dims());
        for ((src, lo), hi) in input
            .data()
            .chunks_exact(plane)
            .zip(lfc.data_mut().chunks_exact_mut(plane))
            .zip(hfc.data_mut().chunks_exact_mut(plane))
        {
            splitter.split_into(src, lo, hi)?;
        }
        Ok(BandStats {
            lfc: BatchStats::of(&lfc)?,
            hfc: BatchStats::of(&hfc)?,
        })
    }

    /// Statistics that normalize `input`. With `commit` the low-band EMA
    /// first absorbs this batch; without it the stored estimate is reused
    /// (replaying a batch that was already committed).
    pub fn forward_stats(&mut self, input: &Tensor<T>, commit: bool) -> Result<BatchStats<T>> {
        let bands = self.band_stats(input)?;
        if commit {
            let a = T::of(self.alpha);
            let keep = T::one() - a;
            for ch in 0..self.mu_lfc.len() {
                self.mu_lfc[ch] = keep * self.mu_lfc[ch] + a * bands.lfc.mean[ch];
                self.var_lfc[ch] = keep * self.var_lfc[ch] + a * bands.lfc.var[ch];
            }
            self.steps += 1;
        }
        let low = BatchStats {
            mean: self.mu_lfc.clone(),
            var: self.var_lfc.clone(),
        };
        let stats = combine(&low, &bands.hfc)?;
        self.last = Some(bands);
        Ok(stats)
    }
}

/// `mean = mean_lfc + mean_hfc`, `var = var_lfc + var_hfc`.
pub fn combine<T: Scalar>(lfc: &BatchStats<T>, hfc: &BatchStats<T>) -> Result<BatchStats<T>> {
    if lfc.channels() != hfc.channels() || lfc.var.len() != hfc.var.len() {
        bail!(InvalidShape, "band statistics disagree on channel count");
    }
    Ok(BatchStats {
        mean: lfc.mean.iter().zip(&hfc.mean).map(|(&a, &b)| a + b).collect(),
        var: lfc.var.iter().zip(&hfc.var).map(|(&a, &b)| a + b).collect(),
    })
}

/// One FABN step on a layer already switched to frequency-aware statistics.
pub fn fabn_forward<T: Scalar>(input: &Tensor<T>, layer: &mut BatchNorm<T>) -> Result<Tensor<T>> {
    if !matches!(layer.normalization, Normalization::FrequencyAware(_)) {
        bail!(InvalidState, "{}: layer is not frequency-aware", layer.name);
    }
    layer.forward(input, BnMode::Adapt { commit: true }, false)
}

/// Normalize with the current batch's statistics; the layer is not modified.
pub fn norm_adapt_forward<T: Scalar>(input: &Tensor<T>, layer: &BatchNorm<T>) -> Result<Tensor<T>> {
    let (n, _, h, w) = input.nchw()?;
    if n * h * w < 2 {
        bail!(InvalidArgument, "{}: need at least 2 values per channel", layer.name);
    }
    let mut scratch = layer.clone();
    scratch.normalization = Normalization::TestBatch {
        tracked: layer.running_mean.clone(),
        alpha: 0.0,
    };
    scratch.forward(input, BnMode::Adapt { commit: false }, false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(try_from = "String", into = "String"))]
pub enum Method {
    None,
    Norm,
    Tent,
    Sar,
    Fabn,
    FabnTent,
    FabnSar,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::None,
        Method::Norm,
        Method::Tent,
        Method::Sar,
        Method::Fabn,
        Method::FabnTent,
        Method::FabnSar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Norm => "norm",
            Method::Tent => "tent",
            Method::Sar => "sar",
            Method::Fabn => "fabn",
            Method::FabnTent => "fabn+tent",
            Method::FabnSar => "fabn+sar",
        }
    }

    pub fn uses_fabn(self) -> bool {
        matches!(self, Method::Fabn | Method::FabnTent | Method::FabnSar)
    }

    fn objective(self) -> Objective {
        match self {
            Method::Tent | Method::FabnTent => Objective::Entropy,
            Method::Sar | Method::FabnSar => Objective::Sharpness,
            _ => Objective::StatsOnly,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(v: Method) -> String {
        String::from(v.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Objective {
    StatsOnly,
    Entropy,
    Sharpness,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(try_from = "String", into = "String"))]
pub enum ResetPolicy {
    #[default]
    PerDomain,
    Continual,
}

impl ResetPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ResetPolicy::PerDomain => "per-domain",
            ResetPolicy::Continual => "continual",
        }
    }
}

impl FromStr for ResetPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-domain" => Ok(ResetPolicy::PerDomain),
            "continual" => Ok(ResetPolicy::Continual),
            _ => Err(Error::InvalidArgument(format!("unknown reset policy '{s}'"))),
        }
    }
}

impl TryFrom<String> for ResetPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ResetPolicy> for String {
    fn from(v: ResetPolicy) -> String {
        String::from(v.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SarConfig {
    /// Entropy threshold; `None` means `0.4 ln C`.
    pub e0: Option<f64>,
    pub rho: f64,
    pub rule: UpdateRule,
}

impl Default for SarConfig {
    fn default() -> Self {
        SarConfig {
            e0: None,
            rho: 0.05,
            rule: UpdateRule::Sgd(SgdConfig {
                lr: 0.00025,
                momentum: 0.9,
                weight_decay: 0.0,
            }),
        }
    }
}

/// `0.4 ln C`.
pub fn default_e0(num_classes: usize) -> f64 {
    0.4 * libm::log(num_classes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdaptConfig {
    pub method: Method,
    pub reset: ResetPolicy,
    pub alpha: f64,
    pub radius: RadiusRule,
    pub tent: UpdateRule,
    pub sar: SarConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            method: Method::Fabn,
            reset: ResetPolicy::PerDomain,
            alpha: 0.1,
            radius: RadiusRule::Fraction(0.25),
            tent: UpdateRule::Adam(AdamConfig::with_lr(1e-3)),
            sar: SarConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!(InvalidArgument, "alpha must lie in [0, 1], got {}", self.alpha);
        }
        if let RadiusRule::Fraction(f) = self.radius {
            if !(f > 0.0 && f <= 1.0) {
                bail!(InvalidArgument, "radius fraction must lie in (0, 1], got {}", f);
            }
        }
        if !(self.sar.rho >= 0.0) {
            bail!(InvalidArgument, "rho must be >= 0, got {}", self.sar.rho);
        }
        if let Some(e0) = self.sar.e0 {
            if !(e0 > 0.0) {
                bail!(InvalidArgument, "e0 must be > 0, got {}", e0);
            }
        }
        for rule in [self.tent, self.sar.rule] {
            if !(rule.lr() >= 0.0) {
                bail!(InvalidArgument, "learning rate must be >= 0");
            }
        }
        Ok(())
    }
}

/// Switch every BN layer of `model` to the statistics `method` needs.
pub fn configure<T: Scalar>(model: &mut ResNet<T>, method: Method, alpha: f64, radius: RadiusRule) -> Result<()> {
    for bn in model.batchnorms_mut() {
        bn.normalization = match method {
            Method::None => Normalization::Standard,
            Method::Norm | Method::Tent | Method::Sar => Normalization::TestBatch {
                tracked: bn.running_mean.clone(),
                alpha,
            },
            _ => Normalization::FrequencyAware(FabnLayer::from_source(bn, alpha, radius)?),
        };
        bn.clear_cache();
    }
    Ok(())
}

/// Outcome of adapting on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub predictions: Vec<usize>,
    pub mean_entropy: f64,
    /// Samples dropped from the loss by the entropy filter.
    pub filtered: usize,
}

fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.dims()[1];
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

fn mean<T: Scalar>(values: &[T]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.as_f64()).sum::<f64>() / values.len() as f64
}

/// Hash of every parameter an adaptation step must leave alone.
fn frozen_fingerprint<T: Scalar>(model: &mut ResNet<T>) -> u64 {
    struct Hash(u64);
    impl<T: Scalar> TensorVisitor<T> for Hash {
        fn param(&mut self, _: &str, _: &str, kind: ParamKind, _: &[usize], value: &mut [T], _: &mut [T]) {
            if !kind.is_bn_affine() {
                for v in value.iter() {
                    self.0 = (self.0 ^ v.as_f64().to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        fn buffer(&mut self, _: &str, _: &str, _: BufferKind, _: &[usize], value: &mut [T]) {
            for v in value.iter() {
                self.0 = (self.0 ^ v.as_f64().to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    let mut h = Hash(0xcbf2_9ce4_8422_2325);
    model.visit(&mut h);
    h.0
}

fn guarded_step<T: Scalar>(model: &mut ResNet<T>, opt: &mut Optimizer<T>) -> Result<()> {
    if opt.filter != ParamFilter::BnAffine {
        bail!(Invariant, "adaptation optimizer must be restricted to BN affine parameters");
    }
    let before = frozen_fingerprint(model);
    opt.step(model)?;
    if frozen_fingerprint(model) != before {
        bail!(Invariant, "a parameter outside BN affine changed during adaptation");
    }
    Ok(())
}

fn entropy_pass<T: Scalar>(
    model: &mut ResNet<T>,
    images: &Tensor<T>,
    commit: bool,
    select: Option<&[bool]>,
) -> Result<(Tensor<T>, Vec<T>, usize)> {
    model.zero_grad();
    let logits = model.forward(images, BnMode::Adapt { commit }, true)?;
    let el = entropy_loss(&logits, select)?;
    if el.selected > 0 {
        model.backward(&el.grad)?;
    }
    model.clear_cache();
    Ok((logits, el.per_sample, el.selected))
}

/// One entropy-minimisation step on BN affine parameters. Predictions come
/// from the adapting forward pass.
pub fn tent_step<T: Scalar>(model: &mut ResNet<T>, images: &Tensor<T>, opt: &mut Optimizer<T>) -> Result<StepOutcome> {
    tent_step_masked(model, images, opt, None)
}

fn tent_step_masked<T: Scalar>(
    model: &mut ResNet<T>,
    images: &Tensor<T>,
    opt: &mut Optimizer<T>,
    select: Option<&[bool]>,
) -> Result<StepOutcome> {
    let (logits, per_sample, selected) = entropy_pass(model, images, true, select)?;
    if selected > 0 {
        guarded_step(model, opt)?;
    }
    Ok(StepOutcome {
        predictions: argmax_rows(&logits),
        mean_entropy: mean(&per_sample),
        filtered: per_sample.len() - selected,
    })
}

/// Entropy-filtered step with a sharpness-aware update on BN affine parameters.
pub fn sar_step<T: Scalar>(
    model: &mut ResNet<T>,
    images: &Tensor<T>,
    opt: &mut Optimizer<T>,
    e0: f64,
    rho: f64,
) -> Result<StepOutcome> {
    if !(e0 > 0.0) || !(rho >= 0.0) {
        bail!(InvalidArgument, "need e0 > 0 and rho >= 0, got e0 = {}, rho = {}", e0, rho);
    }
    model.zero_grad();
    let logits = model.forward(images, BnMode::Adapt { commit: true }, true)?;
    let first = entropy_loss(&logits, None)?;
    let keep: Vec<bool> = first.per_sample.iter().map(|h| h.as_f64() < e0).collect();
    let selected = keep.iter().filter(|&&k| k).count();
    let outcome = StepOutcome {
        predictions: argmax_rows(&logits),
        mean_entropy: mean(&first.per_sample),
        filtered: keep.len() - selected,
    };
    if selected == 0 {
        model.clear_cache();
        return Ok(outcome);
    }
    let filtered = entropy_loss(&logits, Some(&keep))?;
    model.backward(&filtered.grad)?;
    model.clear_cache();

    // ascent: e = rho g / |g| over all affine parameters
    let mut perturbation = affine_grads(model);
    let norm = libm::sqrt(perturbation.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>());
    let scale = T::of(rho / (norm + 1e-12));
    for e in perturbation.iter_mut() {
        *e *= scale;
    }
    shift_affine(model, &perturbation, false);
    let (_, _, _) = entropy_pass(model, images, false, Some(&keep))?;
    shift_affine(model, &perturbation, true);
    guarded_step(model, opt)?;
    Ok(outcome)
}

fn affine_grads<T: Scalar>(model: &mut ResNet<T>) -> Vec<T> {
    struct Gather<T>(Vec<T>);
    impl<T: Scalar> TensorVisitor<T> for Gather<T> {
        fn param(&mut self, _: &str, _: &str, kind: ParamKind, _: &[usize], _: &mut [T], grad: &mut [T]) {
            if kind.is_bn_affine() {
                self.0.extend_from_slice(grad);
            }
        }
        fn buffer(&mut self, _: &str, _: &str, _: BufferKind, _: &[usize], _: &mut [T]) {}
    }
    let mut g = Gather(Vec::new());
    model.visit(&mut g);
    g.0
}

fn shift_affine<T: Scalar>(model: &mut ResNet<T>, delta: &[T], undo: bool) {
    struct Shift<'a, T> {
        delta: &'a [T],
        at: usize,
        undo: bool,
    }
    impl<T: Scalar> TensorVisitor<T> for Shift<'_, T> {
        fn param(&mut self, _: &str, _: &str, kind: ParamKind, _: &[usize], value: &mut [T], _: &mut [T]) {
            if kind.is_bn_affine() {
                for v in value.iter_mut() {
                    let d = self.delta[self.at];
                    if self.undo {
                        *v -= d;
                    } else {
                        *v += d;
                    }
                    self.at += 1;
                }
            }
        }
        fn buffer(&mut self, _: &str, _: &str, _: BufferKind, _: &[usize], _: &mut [T]) {}
    }
    model.visit(&mut Shift { delta, at: 0, undo });
}

/// First layer whose activation step has not been set from data yet.
fn uncalibrated_quantizer<T: Scalar>(model: &mut ResNet<T>) -> Option<String> {
    struct Find(Option<String>);
    impl<T: Scalar> TensorVisitor<T> for Find {
        fn param(&mut self, _: &str, _: &str, _: ParamKind, _: &[usize], _: &mut [T], _: &mut [T]) {}
        fn buffer(&mut self, layer: &str, _: &str, kind: BufferKind, _: &[usize], value: &mut [T]) {
            if self.0.is_none() && kind == BufferKind::Flag && value.iter().any(|v| *v <= T::zero()) {
                self.0 = Some(String::from(layer));
            }
        }
    }
    let mut f = Find(None);
    model.visit(&mut f);
    f.0
}

/// A model under adaptation together with its source snapshot.
#[derive(Clone, Debug)]
pub struct Adapter<T: Scalar> {
    pub config: AdaptConfig,
    source: ResNet<T>,
    model: ResNet<T>,
    opt: Optimizer<T>,
}

impl<T: Scalar> Adapter<T> {
    pub fn new(model: &ResNet<T>, config: AdaptConfig) -> Result<Self> {
        config.validate()?;
        let mut source = model.clone();
        if let Some(layer) = uncalibrated_quantizer(&mut source) {
            bail!(
                InvalidState,
                "{}: activation quantizer was never calibrated; adapt a trained model",
                layer
            );
        }
        source.clear_cache();
        configure(&mut source, config.method, config.alpha, config.radius)?;
        let rule = match config.method.objective() {
            Objective::Sharpness => config.sar.rule,
            _ => config.tent,
        };
        Ok(Adapter {
            config,
            model: source.clone(),
            source,
            opt: Optimizer::new(rule, ParamFilter::BnAffine),
        })
    }

    pub fn model(&self) -> &ResNet<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ResNet<T> {
        &mut self.model
    }

    /// Back to the source parameters and statistics, optimizer memory cleared.
    pub fn reset(&mut self) {
        self.model = self.source.clone();
        self.opt.reset();
    }

    pub fn step(&mut self, images: &Tensor<T>) -> Result<StepOutcome> {
        let (n, c, _, _) = images.nchw()?;
        if c != self.model.config.in_channels {
            bail!(
                InvalidArgument,
                "batch has {} channels, model expects {}",
                c,
                self.model.config.in_channels
            );
        }
        if n == 0 {
            bail!(InvalidArgument, "empty batch");
        }
        match self.config.method.objective() {
            Objective::StatsOnly => {
                let mode = if self.config.method == Method::None {
                    BnMode::Eval
                } else {
                    BnMode::Adapt { commit: true }
                };
                let logits = self.model.forward(images, mode, false)?;
                let el = entropy_loss(&logits, None)?;
                Ok(StepOutcome {
                    predictions: argmax_rows(&logits),
                    mean_entropy: mean(&el.per_sample),
                    filtered: 0,
                })
            }
            Objective::Entropy => tent_step(&mut self.model, images, &mut self.opt),
            Objective::Sharpness => {
                let e0 = self
                    .config
                    .sar
                    .e0
                    .unwrap_or_else(|| default_e0(self.model.num_classes()));
                sar_step(&mut self.model, images, &mut self.opt, e0, self.config.sar.rho)
            }
        }
    }
}

/// One labelled batch of a test stream.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch<T = f32> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// The ordered batches of one target domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain<T = f32> {
    pub name: String,
    pub batches: Vec<LabeledBatch<T>>,
}

impl<T: Scalar> Domain<T> {
    /// Cut `images` (N x C x H x W) into consecutive batches, the last may be short.
    pub fn from_images(name: impl Into<String>, images: &Tensor<T>, labels: &[usize], batch_size: usize) -> Result<Self> {
        let (n, _, _, _) = images.nchw()?;
        if labels.len() != n {
            bail!(InvalidArgument, "{} labels for {} images", labels.len(), n);
        }
        if batch_size == 0 {
            bail!(InvalidArgument, "batch size must be >= 1");
        }
        let batches = (0..n)
            .step_by(batch_size)
            .map(|start| {
                let end = (start + batch_size).min(n);
                LabeledBatch {
                    images: images.slice_batch(start, end),
                    labels: labels[start..end].to_vec(),
                }
            })
            .collect();
        Ok(Domain {
            name: name.into(),
            batches,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub domain: String,
    pub batch_idx: usize,
    pub online_acc: f64,
    pub cum_acc: f64,
    pub mean_entropy: f64,
    pub filtered: usize,
    pub predictions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSummary {
    pub name: String,
    pub correct: usize,
    pub total: usize,
}

impl DomainSummary {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Streaming record of one adaptation run.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationRun {
    pub method: Method,
    pub reset: ResetPolicy,
    pub records: Vec<BatchRecord>,
    pub domains: Vec<DomainSummary>,
}

impl AdaptationRun {
    pub fn correct(&self) -> usize {
        self.domains.iter().map(|d| d.correct).sum()
    }

    pub fn total(&self) -> usize {
        self.domains.iter().map(|d| d.total).sum()
    }

    /// Cumulative accuracy over every batch seen.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn domain_accuracy(&self, name: &str) -> Option<f64> {
        self.domains.iter().find(|d| d.name == name).map(DomainSummary::accuracy)
    }
}

/// Adapt `model` over `domains` in order, scoring every batch with the
/// predictions made while adapting on it.
pub fn run_adaptation<T: Scalar>(model: &ResNet<T>, domains: &[Domain<T>], config: &AdaptConfig) -> Result<AdaptationRun> {
    let mut adapter = Adapter::new(model, *config)?;
    run_with(&mut adapter, domains)
}

/// [`run_adaptation`] on an existing adapter, e.g. to inspect its state afterwards.
pub fn run_with<T: Scalar>(adapter: &mut Adapter<T>, domains: &[Domain<T>]) -> Result<AdaptationRun> {
    let mut run = AdaptationRun {
        method: adapter.config.method,
        reset: adapter.config.reset,
        records: Vec::new(),
        domains: Vec::new(),
    };
    let (mut correct, mut total) = (0usize, 0usize);
    for (d, domain) in domains.iter().enumerate() {
        if d > 0 && adapter.config.reset == ResetPolicy::PerDomain {
            adapter.reset();
        }
        let mut summary = DomainSummary {
            name: domain.name.clone(),
            correct: 0,
            total: 0,
        };
        for (batch_idx, batch) in domain.batches.iter().enumerate() {
            let n = batch.images.dims().first().copied().unwrap_or(0);
            if batch.labels.len() != n {
                bail!(
                    InvalidArgument,
                    "{} batch {}: {} labels for {} images",
                    domain.name,
                    batch_idx,
                    batch.labels.len(),
                    n
                );
            }
            let out = adapter.step(&batch.images)?;
            let hits = out
                .predictions
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            correct += hits;
            total += n;
            summary.correct += hits;
            summary.total += n;
            run.records.push(BatchRecord {
                domain: domain.name.clone(),
                batch_idx,
                online_acc: hits as f64 / n as f64,
                cum_acc: correct as f64 / total as f64,
                mean_entropy: out.mean_entropy,
                filtered: out.filtered,
                predictions: out.predictions,
            });
        }
        run.domains.push(summary);
    }
    Ok(run)
}
