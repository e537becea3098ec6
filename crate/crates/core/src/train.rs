//! Quantization-aware training with optional frequency-band input filtering.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::data::{ChannelNorm, Dataset};
use crate::error::{bail, Error, Result};
use crate::nn::{build_resnet, cross_entropy_loss, BnMode, NamedTensor, ResNet, ResNetConfig};
use crate::optim::{LrSchedule, Optimizer, ParamFilter, SgdConfig, UpdateRule};
use crate::quant::{wrap_quantized_with, StepInit};
use crate::rng;
use crate::spectral::BandSplitter;
use crate::tensor::Tensor;

const SHUFFLE_TAG: u64 = 0x5348_5546;
const AUGMENT_TAG: u64 = 0x4155_4745;

/// Which frequency band of the training images the network sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "kebab-case")
)]
pub enum FilterMode {
    #[default]
    None,
    Low,
    High,
}

impl FilterMode {
    pub fn name(self) -> &'static str {
        match self {
            FilterMode::None => "none",
            FilterMode::Low => "low",
            FilterMode::High => "high",
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FilterMode::None),
            "low" => Ok(FilterMode::Low),
            "high" => Ok(FilterMode::High),
            _ => Err(Error::InvalidArgument(format!("unknown filter mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct TrainConfig {
    pub filter: FilterMode,
    /// Band radius in bins at input resolution; required unless `filter` is none.
    pub radius: Option<f64>,
    /// 0 keeps full precision.
    pub bits: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub step_init: StepInit,
    /// Random 4-px-padded crop and horizontal flip before filtering.
    pub augment: bool,
    pub model: ResNetConfig,
    pub norm: ChannelNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            filter: FilterMode::None,
            radius: None,
            bits: 0,
            epochs: 15,
            batch_size: 64,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::Cosine { t_max: 15, eta_min: 0.0 },
            seed: 0,
            step_init: StepInit::default(),
            augment: true,
            model: ResNetConfig::default(),
            norm: ChannelNorm::cifar10(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter != FilterMode::None {
            match self.radius {
                Some(r) if r >= 0.0 && r.is_finite() => {}
                Some(r) => bail!(InvalidArgument, "radius must be finite and >= 0, got {}", r),
                None => bail!(InvalidArgument, "filter '{}' needs a radius", self.filter),
            }
        }
        if !matches!(self.bits, 0 | 2 | 4 | 8) {
            bail!(InvalidArgument, "bits must be 0, 2, 4 or 8, got {}", self.bits);
        }
        if !(self.lr > 0.0) {
            bail!(InvalidArgument, "lr must be > 0, got {}", self.lr);
        }
        if self.batch_size < 2 {
            bail!(InvalidArgument, "batch size must be >= 2, got {}", self.batch_size);
        }
        if !(self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            bail!(InvalidArgument, "momentum and weight decay must be >= 0");
        }
        if self.norm.mean.len() != self.model.in_channels {
            bail!(
                InvalidArgument,
                "normalization has {} channels, model takes {}",
                self.norm.mean.len(),
                self.model.in_channels
            );
        }
        Ok(())
    }
}

/// Band-filter images in pixel space. The high band is shifted back up by
/// each image's channel mean so it stays centred like a natural image.
pub fn filter_images(images: &Tensor<f32>, mode: FilterMode, radius: f64) -> Result<Tensor<f32>> {
    let (_, _, h, w) = images.nchw()?;
    if mode == FilterMode::None {
        return Ok(images.clone());
    }
    if !images.all_finite() {
        bail!(InvalidData, "images contain non-finite values");
    }
    let splitter = BandSplitter::new(h, w, radius)?;
    let plane = h * w;
    let mut out = Tensor::zeros(images.dims());
    let mut lfc = vec![0.0f32; plane];
    let mut hfc = vec![0.0f32; plane];
    for (src, dst) in images.data().chunks_exact(plane).zip(out.data_mut().chunks_exact_mut(plane)) {
        splitter.split_into(src, &mut lfc, &mut hfc)?;
        match mode {
            FilterMode::Low => dst.copy_from_slice(&lfc),
            _ => {
                let mean = src.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
                for (d, &v) in dst.iter_mut().zip(&hfc) {
                    *d = v + mean as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Filter (per `config`) then normalize a batch of `[0, 1]` images.
pub fn preprocess_batch(images: &Tensor<f32>, config: &TrainConfig) -> Result<Tensor<f32>> {
    let filtered = filter_images(images, config.filter, config.radius.unwrap_or(0.0))?;
    config.norm.apply(&filtered)
}

/// Random crop from a 4-px zero-padded frame plus horizontal flip, per image.
fn augment(images: &Tensor<f32>, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    const PAD: i64 = 4;
    let (n, c, h, w) = images.nchw()?;
    let mut out = Tensor::zeros(images.dims());
    for i in 0..n {
        let dy = rng.random_range(-PAD..=PAD) as isize;
        let dx = rng.random_range(-PAD..=PAD) as isize;
        let flip = rng.random::<bool>();
        let src = images.sample(i);
        let dst = out.sample_mut(i);
        for ch in 0..c {
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Fisher-Yates permutation drawn from the `(seed, epoch)` stream.
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed ^ SHUFFLE_TAG, epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_eval_acc: f64,
    pub seconds: f64,
}

/// Trained model (best-eval weights loaded) and its history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ResNet<f32>,
    pub report: TrainReport,
}

/// Optional callbacks: a monotonic clock in seconds and a per-epoch observer.
#[derive(Default)]
pub struct Hooks<'a> {
    pub clock: Option<&'a dyn Fn() -> f64>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochMetrics)>,
}

/// Model that `config` trains, before any step.
pub fn initial_model(config: &TrainConfig, num_classes: usize, in_channels: usize) -> Result<ResNet<f32>> {
    let model_cfg = ResNetConfig {
        num_classes,
        in_channels,
        seed: config.seed,
        ..config.model.clone()
    };
    let model = build_resnet(&model_cfg)?;
    if config.bits == 0 {
        Ok(model)
    } else {
        wrap_quantized_with(model, config.bits, config.step_init)
    }
}

pub fn train_qat(config: &TrainConfig, train_set: &Dataset, eval_set: &Dataset) -> Result<TrainOutcome> {
    train_qat_with(config, train_set, eval_set, Hooks::default())
}

pub fn train_qat_with(config: &TrainConfig, train_set: &Dataset, eval_set: &Dataset, mut hooks: Hooks<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    if eval_set.is_empty() {
        bail!(InvalidArgument, "evaluation set is empty");
    }
    if train_set.len() < 2 {
        bail!(InvalidArgument, "training set needs at least 2 images");
    }
    if train_set.num_classes != eval_set.num_classes || train_set.image_dims() != eval_set.image_dims() {
        bail!(InvalidArgument, "training and evaluation sets disagree on classes or image shape");
    }
    let now = |h: &Hooks<'_>| h.clock.map_or(0.0, |c| c());
    let started = now(&hooks);
    let (in_c, _, _) = train_set.image_dims();
    let mut model = initial_model(config, train_set.num_classes, in_c)?;
    let mut opt = Optimizer::new(
        UpdateRule::Sgd(SgdConfig {
            lr: config.lr,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
        }),
        ParamFilter::All,
    );
    let mut aug_rng = rng::stream(config.seed ^ AUGMENT_TAG, 0);
    let n = train_set.len();
    let bs = config.batch_size.min(n);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<NamedTensor<f32>>)> = None;
    for epoch in 0..config.epochs {
        let epoch_start = now(&hooks);
        opt.lr = config.schedule.lr_at(config.lr, epoch);
        let perm = epoch_permutation(config.seed, epoch, n);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (b, idx) in perm.chunks(bs).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let raw = train_set.images.gather(idx);
            let raw = if config.augment {
                augment(&raw, &mut aug_rng)?
            } else {
                raw
            };
            let x = preprocess_batch(&raw, config)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            model.zero_grad();
            let logits = model.forward(&x, BnMode::Train, true)?;
            let ce = cross_entropy_loss(&logits, &labels)?;
            if !ce.loss.is_finite() {
                let layer = model.first_non_finite().unwrap_or_else(|| String::from("logits"));
                return Err(Error::NonFinite {
                    layer,
                    detail: format!("loss is {} at epoch {} batch {}", ce.loss, epoch, b),
                });
            }
            model.backward(&ce.grad)?;
            opt.step(&mut model)?;
            if let Some(layer) = model.first_non_finite() {
                return Err(Error::NonFinite {
                    layer,
                    detail: format!("after update at epoch {} batch {}", epoch, b),
                });
            }
            loss_sum += ce.loss as f64 * labels.len() as f64;
            correct += count_correct(&logits, &labels);
            seen += labels.len();
        }
        model.clear_cache();
        let eval = evaluate(&mut model, eval_set, bs, &config.norm)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            eval_acc: eval.accuracy,
            seconds: now(&hooks) - epoch_start,
        };
        if best.as_ref().is_none_or(|(_, acc, _)| eval.accuracy > *acc) {
            best = Some((epoch + 1, eval.accuracy, model.state()));
        }
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&m);
        }
        epochs.push(m);
    }
    let (best_epoch, best_eval_acc) = match best {
        Some((e, acc, state)) => {
            model.load_state(&state)?;
            (e, acc)
        }
        None => (0, evaluate(&mut model, eval_set, bs, &config.norm)?.accuracy),
    };
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            epochs,
            best_epoch,
            best_eval_acc,
            seconds: now(&hooks) - started,
        },
    })
}

fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    predictions(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count()
}

/// Row-wise argmax (first maximum wins).
pub fn predictions(logits: &Tensor<f32>) -> Vec<usize> {
    let c = logits.dims()[1];
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Accuracy per class; `NaN` for classes absent from the set.
    pub per_class: Vec<f64>,
    pub correct: usize,
    pub total: usize,
}

/// Accuracy with eval-mode BN on normalized (unfiltered) images.
pub fn evaluate(model: &mut ResNet<f32>, dataset: &Dataset, batch_size: usize, norm: &ChannelNorm) -> Result<EvalReport> {
    if model.num_classes() != dataset.num_classes {
        bail!(
            InvalidArgument,
            "model has {} classes, dataset {}",
            model.num_classes(),
            dataset.num_classes
        );
    }
    if batch_size == 0 {
        bail!(InvalidArgument, "batch size must be >= 1");
    }
    let preds = predict(model, &dataset.images, batch_size, norm)?;
    Ok(score(&preds, &dataset.labels, dataset.num_classes))
}

/// Eval-mode predictions for `[0, 1]` images.
pub fn predict(model: &mut ResNet<f32>, images: &Tensor<f32>, batch_size: usize, norm: &ChannelNorm) -> Result<Vec<usize>> {
    let (n, _, _, _) = images.nchw()?;
    let mut preds = Vec::with_capacity(n);
    for start in (0..n).step_by(batch_size.max(1)) {
        let end = (start + batch_size).min(n);
        let x = norm.apply(&images.slice_batch(start, end))?;
        let logits = model.forward(&x, BnMode::Eval, false)?;
        preds.extend(predictions(&logits));
    }
    Ok(preds)
}

/// Overall and per-class accuracy of `preds` against `labels`.
pub fn score(preds: &[usize], labels: &[usize], num_classes: usize) -> EvalReport {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let total = labels.len();
    EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
            .collect(),
        correct,
        total,
    }
}
