//! Scaled-down trend checks over three seeds.

use std::path::PathBuf;
use std::time::Instant;

use freqcoda::commands::adapted_sse;
use freqcoda::datasets::load_cifar10;
use freqcoda_core::analysis::{frequency_distance_matrix, Band};
use freqcoda_core::data::{corrupt_dataset, synth_dataset_with, ChannelNorm, CorruptionKind, CorruptionSpec, Dataset, SynthConfig};
use freqcoda_core::optim::LrSchedule;
use freqcoda_core::train::{evaluate, filter_images, train_qat, FilterMode, TrainConfig};
use freqcoda_core::tta::{run_adaptation, AdaptConfig, Domain, Method, RadiusRule, ResetPolicy};
use freqcoda_core::{ResNet, ResNetConfig};

use crate::Verdict;

pub const NAMES: [(u8, &str); 7] = [
    (8, "low-band training robustness"),
    (9, "high-band training collapse"),
    (10, "adaptation ordering"),
    (11, "pre-filtered adaptation ablation"),
    (12, "batch-size robustness"),
    (13, "low band more domain-invariant"),
    (14, "lower BN drift after low-band training"),
];

const SEEDS: [u64; 3] = [11, 22, 33];
const RADIUS: f64 = 8.0;
const STREAM: [CorruptionKind; 4] =
    [CorruptionKind::GaussianNoise, CorruptionKind::DefocusBlur, CorruptionKind::Contrast, CorruptionKind::Pixelate];

pub struct Lines {
    pub scale: String,
    pub verdicts: Vec<(u8, &'static str, Verdict)>,
}

enum Source {
    Synthetic { train: usize, test: usize, classes: usize },
    Cifar(PathBuf),
}

struct Scale {
    source: Source,
    epochs: usize,
}

impl Scale {
    fn from_env() -> Scale {
        match std::env::var_os("FREQCODA_CIFAR10_DIR") {
            Some(dir) => Scale { source: Source::Cifar(dir.into()), epochs: 15 },
            None => Scale { source: Source::Synthetic { train: 480, test: 256, classes: 4 }, epochs: 8 },
        }
    }

    fn describe(&self) -> String {
        match &self.source {
            Source::Synthetic { train, test, classes } => format!(
                "synthetic proxy, {train} train / {test} test images, {classes} classes, {} epochs, seeds {SEEDS:?}",
                self.epochs
            ),
            Source::Cifar(dir) => format!("CIFAR-10 from {}, 10k train subset, {} epochs, seeds {SEEDS:?}", dir.display(), self.epochs),
        }
    }

    fn splits(&self, seed: u64) -> (Dataset, Dataset) {
        match &self.source {
            Source::Synthetic { train, test, classes } => {
                let cfg = SynthConfig { num_classes: *classes, ..SynthConfig::default() };
                (synth_dataset_with(seed, *train, &cfg).unwrap(), synth_dataset_with(seed + 1000, *test, &cfg).unwrap())
            }
            Source::Cifar(dir) => {
                let (train, test) = load_cifar10(dir).unwrap();
                (train.balanced_prefix(1000), test.balanced_prefix(100))
            }
        }
    }
}

fn train(scale: &Scale, seed: u64, filter: FilterMode, data: &(Dataset, Dataset)) -> ResNet<f32> {
    let cfg = TrainConfig {
        filter,
        radius: (filter != FilterMode::None).then_some(RADIUS),
        bits: 2,
        epochs: scale.epochs,
        schedule: LrSchedule::Cosine { t_max: scale.epochs, eta_min: 0.0 },
        seed,
        model: ResNetConfig { depth_blocks: vec![1, 1, 1], base_width: 16, ..ResNetConfig::default() },
        ..TrainConfig::default()
    };
    train_qat(&cfg, &data.0, &data.1).unwrap().model
}

fn accuracy(model: &ResNet<f32>, ds: &Dataset) -> f64 {
    100.0 * evaluate(&mut model.clone(), ds, 100, &ChannelNorm::cifar10()).unwrap().accuracy
}

fn stream(test: &Dataset, seed: u64, batch: usize, prefilter: Option<f64>) -> Vec<Domain<f32>> {
    STREAM
        .iter()
        .map(|&kind| {
            let spec = CorruptionSpec::new(kind, 3, seed + 7).unwrap();
            let shifted = corrupt_dataset(test, &spec).unwrap();
            let mut images = shifted.images;
            if let Some(r) = prefilter {
                images = filter_images(&images, FilterMode::Low, r).unwrap();
            }
            Domain::from_images(spec.label(), &ChannelNorm::cifar10().apply(&images).unwrap(), &shifted.labels, batch).unwrap()
        })
        .collect()
}

fn adapt(model: &ResNet<f32>, domains: &[Domain<f32>], method: Method) -> f64 {
    let cfg = AdaptConfig { method, radius: RadiusRule::from_training(RADIUS, 32).unwrap(), ..AdaptConfig::default() };
    100.0 * run_adaptation(model, domains, &cfg).unwrap().accuracy()
}

struct SeedResult {
    ffc_clean: f64,
    ffc_noisy: f64,
    lfc_clean: f64,
    lfc_noisy: f64,
    hfc_clean: f64,
    none: f64,
    norm: f64,
    fabn: f64,
    fabn_tent: f64,
    fabn_prefiltered: f64,
    norm_b8: f64,
    fabn_b8: f64,
    dist_low: f64,
    dist_high: f64,
    sse_lfc: f64,
    sse_ffc: f64,
}

/// Stage timings go to stderr so long runs show progress.
fn timed<R>(seed: u64, stage: &str, f: impl FnOnce() -> R) -> R {
    let t = Instant::now();
    let r = f();
    eprintln!("  seed {seed} {stage}: {:.1}s", t.elapsed().as_secs_f64());
    r
}

fn one_seed(scale: &Scale, seed: u64) -> SeedResult {
    let data = scale.splits(seed);
    let test = &data.1;
    let ffc = timed(seed, "train full", || train(scale, seed, FilterMode::None, &data));
    let lfc = timed(seed, "train low", || train(scale, seed, FilterMode::Low, &data));
    let hfc = timed(seed, "train high", || train(scale, seed, FilterMode::High, &data));
    let gaussian = corrupt_dataset(test, &CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, seed + 7).unwrap()).unwrap();

    let s64 = stream(test, seed, 64, None);
    let s8 = stream(test, seed, 8, None);
    let filtered = stream(test, seed, 64, Some(4.0));

    let specs: Vec<CorruptionSpec> =
        CorruptionKind::SHIFTS.iter().map(|&k| CorruptionSpec::new(k, 3, seed + 7).unwrap()).collect();
    let distance = |band| frequency_distance_matrix(test, &specs, RADIUS, band, 8).unwrap().overall.mean_off_diagonal();

    let continual = |method| AdaptConfig {
        method,
        reset: ResetPolicy::Continual,
        radius: RadiusRule::from_training(RADIUS, 32).unwrap(),
        ..AdaptConfig::default()
    };
    SeedResult {
        ffc_clean: accuracy(&ffc, test),
        ffc_noisy: accuracy(&ffc, &gaussian),
        lfc_clean: accuracy(&lfc, test),
        lfc_noisy: accuracy(&lfc, &gaussian),
        hfc_clean: accuracy(&hfc, test),
        none: timed(seed, "none", || adapt(&lfc, &s64, Method::None)),
        norm: timed(seed, "norm", || adapt(&lfc, &s64, Method::Norm)),
        fabn: timed(seed, "fabn", || adapt(&lfc, &s64, Method::Fabn)),
        fabn_tent: timed(seed, "fabn+tent", || adapt(&lfc, &s64, Method::FabnTent)),
        fabn_prefiltered: timed(seed, "fabn pre-filtered", || adapt(&lfc, &filtered, Method::Fabn)),
        norm_b8: timed(seed, "norm b8", || adapt(&lfc, &s8, Method::Norm)),
        fabn_b8: timed(seed, "fabn b8", || adapt(&lfc, &s8, Method::Fabn)),
        dist_low: timed(seed, "distance low", || distance(Band::Low)),
        dist_high: timed(seed, "distance high", || distance(Band::High)),
        sse_lfc: timed(seed, "sse low", || adapted_sse(&lfc, &s64, continual(Method::Fabn)).unwrap().total),
        sse_ffc: timed(seed, "sse full", || adapted_sse(&ffc, &s64, continual(Method::Norm)).unwrap().total),
    }
}

fn mean(runs: &[SeedResult], f: impl Fn(&SeedResult) -> f64) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

pub fn run() -> Lines {
    let scale = Scale::from_env();
    let runs: Vec<SeedResult> = SEEDS.iter().map(|&s| one_seed(&scale, s)).collect();
    let m = |f: fn(&SeedResult) -> f64| mean(&runs, f);
    let mut verdicts = Vec::new();

    let (ffc_noisy, lfc_noisy, ffc_clean, lfc_clean) = (m(|r| r.ffc_noisy), m(|r| r.lfc_noisy), m(|r| r.ffc_clean), m(|r| r.lfc_clean));
    verdicts.push(Verdict::new(
        lfc_noisy >= ffc_noisy + 2.0 && (lfc_clean - ffc_clean).abs() <= 5.0,
        format!("noisy acc low-band {lfc_noisy:.2} vs full {ffc_noisy:.2} (need +2); clean {lfc_clean:.2} vs {ffc_clean:.2} (need within 5)"),
    ));

    let hfc_clean = m(|r| r.hfc_clean);
    verdicts.push(Verdict::new(
        hfc_clean <= 0.5 * lfc_clean,
        format!("clean acc high-band {hfc_clean:.2} vs half of low-band {:.2}", 0.5 * lfc_clean),
    ));

    let (none, norm, fabn, fabn_tent) = (m(|r| r.none), m(|r| r.norm), m(|r| r.fabn), m(|r| r.fabn_tent));
    verdicts.push(Verdict::new(
        fabn >= norm + 1.0 && norm >= none + 3.0 && fabn_tent >= fabn - 0.5,
        format!("fabn {fabn:.2}, norm {norm:.2}, none {none:.2}, fabn+tent {fabn_tent:.2}"),
    ));

    let pre = m(|r| r.fabn_prefiltered);
    verdicts.push(Verdict::new(pre <= fabn - 5.0, format!("pre-filtered {pre:.2} vs unfiltered {fabn:.2} (need 5 below)")));

    let (norm_drop, fabn_drop) = (norm - m(|r| r.norm_b8), fabn - m(|r| r.fabn_b8));
    verdicts.push(Verdict::new(
        fabn_drop < norm_drop,
        format!("drop 64->8: fabn {fabn_drop:.2}, norm {norm_drop:.2}"),
    ));

    let invariant = runs.iter().all(|r| r.dist_low < r.dist_high);
    let pairs: Vec<String> = runs.iter().map(|r| format!("{:.4}<{:.4}", r.dist_low, r.dist_high)).collect();
    verdicts.push(Verdict::new(invariant, format!("low vs high mean distance per seed: {}", pairs.join(", "))));

    let lower = runs.iter().all(|r| r.sse_lfc < r.sse_ffc);
    let pairs: Vec<String> = runs.iter().map(|r| format!("{:.4}<{:.4}", r.sse_lfc, r.sse_ffc)).collect();
    verdicts.push(Verdict::new(lower, format!("low-band/fabn vs full/norm SSE per seed: {}", pairs.join(", "))));

    Lines {
        scale: scale.describe(),
        verdicts: NAMES.iter().zip(verdicts).map(|(&(id, name), v)| (id, name, v)).collect(),
    }
}
