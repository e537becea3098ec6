//! The subcommands. Each takes a fully merged configuration, writes its
//! artifacts into the output directory and returns a JSON summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use freqcoda_core::analysis::{adapted_stats, bn_sse, frequency_distance_matrix, source_stats, Band, SseReport};
use freqcoda_core::data::{synth_dataset_with, CorruptionSpec, Dataset};
use freqcoda_core::optim::{AdamConfig, SgdConfig, UpdateRule};
use freqcoda_core::rng::mix;
use freqcoda_core::spectral::decompose;
use freqcoda_core::train::{evaluate, filter_images, train_qat_with, FilterMode, Hooks};
use freqcoda_core::tta::{run_with, AdaptConfig, Adapter, AdaptationRun, Domain, Method, RadiusRule, ResetPolicy, SarConfig};
use freqcoda_core::{ResNet, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetKind, RunConfig};
use crate::datasets::{corrupt_dataset_par, load_cifar10, pool};
use crate::error::{Error, Result};
use crate::fqt;
use crate::output::{write_manifest, write_matrix, Manifest, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Train,
    Adapt,
    Eval,
    Decompose,
    Corrupt,
    AnalyzeDistance,
    AnalyzeBnSse,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Train => "train",
            Subcommand::Adapt => "adapt",
            Subcommand::Eval => "eval",
            Subcommand::Decompose => "decompose",
            Subcommand::Corrupt => "corrupt",
            Subcommand::AnalyzeDistance => "analyze-distance",
            Subcommand::AnalyzeBnSse => "analyze-bn-sse",
        }
    }
}

/// Where a run writes and what it produced.
struct Run {
    out_dir: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out_dir.join(name)
    }
}

/// Execute `cmd` with a merged configuration whose seed is already fixed.
pub fn execute(cmd: Subcommand, config: &RunConfig) -> Result<PathBuf> {
    let start = Instant::now();
    let seed = config.seed.ok_or_else(|| Error::Config("seed must be resolved before running".into()))?;
    config.validate()?;
    let out_dir = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::Usage("--out-dir is required".into()))?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut run = Run {
        out_dir: out_dir.clone(),
        artifacts: Vec::new(),
    };
    let summary = match cmd {
        Subcommand::Train => train(config, seed, &mut run)?,
        Subcommand::Adapt => adapt(config, seed, &mut run)?,
        Subcommand::Eval => eval(config, seed, &mut run)?,
        Subcommand::Decompose => decompose_cmd(config, &mut run)?,
        Subcommand::Corrupt => corrupt_cmd(config, seed, &mut run)?,
        Subcommand::AnalyzeDistance => analyze_distance(config, seed, &mut run)?,
        Subcommand::AnalyzeBnSse => analyze_bn_sse(config, seed, &mut run)?,
    };
    let manifest = Manifest {
        subcommand: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        artifacts: run.artifacts,
        wall_seconds: start.elapsed().as_secs_f64(),
        summary,
    };
    write_manifest(&out_dir, &manifest)
}

/// Training and test splits for the configured dataset.
pub fn load_splits(config: &RunConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let ds = &config.dataset;
    match ds.kind {
        DatasetKind::Synthetic => {
            let train = synth_dataset_with(mix(seed, 1), ds.train_size.unwrap_or(2000), &ds.synthetic)?;
            let test = synth_dataset_with(mix(seed, 2), ds.test_size.unwrap_or(500), &ds.synthetic)?;
            Ok((train, test))
        }
        DatasetKind::Cifar10 => {
            let dir = ds
                .data_dir
                .as_deref()
                .ok_or_else(|| Error::Config("dataset cifar10 needs --data-dir".into()))?;
            let (train, test) = load_cifar10(dir)?;
            let train = train.balanced_prefix(ds.train_size.unwrap_or(10_000).div_ceil(10));
            let test = match ds.test_size {
                Some(n) => test.balanced_prefix(n.div_ceil(10)),
                None => test,
            };
            Ok((train, test))
        }
    }
}

fn corruption_specs(config: &RunConfig, seed: u64) -> Result<Vec<CorruptionSpec>> {
    let mut specs = Vec::new();
    for &severity in &config.corruption.severities {
        for &kind in &config.corruption.kinds {
            specs.push(CorruptionSpec::new(kind, severity, mix(seed, 100 + severity as u64))?);
        }
    }
    if specs.is_empty() {
        return Err(Error::Config("no corruptions selected".into()));
    }
    Ok(specs)
}

fn read_checkpoint(path: Option<&Path>, flag: &str) -> Result<Checkpoint> {
    let path = path.ok_or_else(|| Error::Usage(format!("{flag} is required")))?;
    Checkpoint::read(path)
}

fn check_compatible(ck: &Checkpoint, ds: &Dataset) -> Result<()> {
    let (c, h, w) = ds.image_dims();
    if (h, w) != ck.input_size || c != ck.model.config.in_channels || ds.num_classes != ck.model.num_classes() {
        return Err(Error::Data(format!(
            "checkpoint expects {}x{}x{} inputs and {} classes, dataset has {c}x{h}x{w} and {}",
            ck.model.config.in_channels,
            ck.input_size.0,
            ck.input_size.1,
            ck.model.num_classes(),
            ds.num_classes
        )));
    }
    Ok(())
}

fn train(config: &RunConfig, seed: u64, run: &mut Run) -> Result<Value> {
    let (train_set, test_set) = load_splits(config, seed)?;
    let mut tc = config.train.clone();
    tc.seed = seed;
    let (_, h, w) = train_set.image_dims();
    let metrics_path = run.path("metrics.csv");
    let mut table = Table::create(&metrics_path, &["epoch", "train_loss", "train_acc", "eval_acc", "seconds"])?;
    let mut write_error = None;
    let start = Instant::now();
    let clock = || start.elapsed().as_secs_f64();
    let mut on_epoch = |m: &freqcoda_core::train::EpochMetrics| {
        let row = [
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.train_acc.to_string(),
            m.eval_acc.to_string(),
            format!("{:.3}", m.seconds),
        ];
        if let Err(e) = table.row(&row) {
            write_error.get_or_insert(e);
        }
    };
    let outcome = train_qat_with(
        &tc,
        &train_set,
        &test_set,
        Hooks {
            clock: Some(&clock),
            on_epoch: Some(&mut on_epoch),
        },
    )?;
    if let Some(e) = write_error {
        return Err(e);
    }
    table.finish()?;
    let ck = Checkpoint {
        model: outcome.model,
        filter: tc.filter,
        radius: if tc.filter == FilterMode::None { None } else { tc.radius },
        input_size: (h, w),
        norm: tc.norm.clone(),
    };
    ck.write(&run.path("checkpoint.fqck"))?;
    let report = &outcome.report;
    Ok(json!({
        "train_images": train_set.len(),
        "test_images": test_set.len(),
        "best_epoch": report.best_epoch,
        "best_eval_acc": report.best_eval_acc,
        "final_train_acc": report.epochs.last().map(|e| e.train_acc),
    }))
}

fn eval(config: &RunConfig, seed: u64, run: &mut Run) -> Result<Value> {
    let mut ck = read_checkpoint(config.checkpoint.as_deref(), "--checkpoint")?;
    let (_, test) = load_splits(config, seed)?;
    check_compatible(&ck, &test)?;
    let bs = config.adapt.batch_size;
    let pool = pool()?;
    let mut table = Table::create(&run.path("eval.csv"), &["domain", "accuracy", "correct", "total"])?;
    let clean = evaluate(&mut ck.model, &test, bs, &ck.norm)?;
    table.row(["clean".to_string(), clean.accuracy.to_string(), clean.correct.to_string(), clean.total.to_string()])?;
    let mut domains = serde_json::Map::new();
    let mut sum = 0.0;
    let specs = corruption_specs(config, seed)?;
    for spec in &specs {
        let shifted = corrupt_dataset_par(&pool, &test, spec)?;
        let r = evaluate(&mut ck.model, &shifted, bs, &ck.norm)?;
        table.row([spec.label(), r.accuracy.to_string(), r.correct.to_string(), r.total.to_string()])?;
        domains.insert(spec.label(), json!(r.accuracy));
        sum += r.accuracy;
    }
    table.finish()?;
    Ok(json!({
        "clean_accuracy": clean.accuracy,
        "mean_corrupted_accuracy": sum / specs.len() as f64,
        "domains": domains,
    }))
}

/// FABN radius rule for a checkpoint under the configured overrides.
pub fn radius_rule(config: &RunConfig, ck: &Checkpoint) -> Result<RadiusRule> {
    let size = ck.input_size.0.min(ck.input_size.1);
    Ok(match (config.adapt.radius, config.adapt.absolute_radius) {
        (Some(r), true) => RadiusRule::Absolute(r),
        (Some(r), false) => RadiusRule::from_training(r, size)?,
        (None, _) => match ck.radius {
            Some(r) if r > 0.0 => RadiusRule::from_training(r, size)?,
            _ => RadiusRule::Fraction(0.25),
        },
    })
}

pub fn adapt_config(config: &RunConfig, method: Method, radius: RadiusRule) -> AdaptConfig {
    let a = &config.adapt;
    AdaptConfig {
        method,
        reset: a.reset,
        alpha: a.alpha,
        radius,
        tent: UpdateRule::Adam(AdamConfig::with_lr(a.tent_lr)),
        sar: SarConfig {
            e0: a.sar_e0,
            rho: a.sar_rho,
            rule: UpdateRule::Sgd(SgdConfig {
                lr: a.sar_lr,
                momentum: 0.9,
                weight_decay: 0.0,
            }),
        },
    }
}

/// Test stream: one domain per corruption spec, normalized with `ck.norm`.
fn build_stream(
    config: &RunConfig,
    ck: &Checkpoint,
    test: &Dataset,
    specs: &[CorruptionSpec],
) -> Result<Vec<Domain<f32>>> {
    let pool = pool()?;
    let mut domains = Vec::with_capacity(specs.len());
    for spec in specs {
        let shifted = corrupt_dataset_par(&pool, test, spec)?;
        let mut images = shifted.images;
        if let Some(r) = config.adapt.prefilter_radius {
            images = filter_images(&images, FilterMode::Low, r)?;
        }
        let mut domain = Domain::from_images(spec.label(), &ck.norm.apply(&images)?, &shifted.labels, config.adapt.batch_size)?;
        if let Some(limit) = config.adapt.batches {
            domain.batches.truncate(limit);
        }
        domains.push(domain);
    }
    Ok(domains)
}

fn adapt(config: &RunConfig, seed: u64, run: &mut Run) -> Result<Value> {
    let ck = read_checkpoint(config.checkpoint.as_deref(), "--checkpoint")?;
    let (_, test) = load_splits(config, seed)?;
    check_compatible(&ck, &test)?;
    let rule = radius_rule(config, &ck)?;
    let cfg = adapt_config(config, config.adapt.method, rule);
    let specs = corruption_specs(config, seed)?;
    let mut log = Table::create(
        &run.path("adapt.csv"),
        &["domain", "batch_idx", "method", "online_acc", "cum_acc", "mean_entropy", "filtered"],
    )?;
    let mut preds = Table::create(&run.path("predictions.csv"), &["domain", "batch_idx", "position", "prediction", "label"])?;
    let mut per_severity = serde_json::Map::new();
    let mut domains_json = serde_json::Map::new();
    let (mut correct, mut total) = (0usize, 0usize);
    for &severity in &config.corruption.severities {
        let group: Vec<CorruptionSpec> = specs.iter().filter(|s| s.severity == severity).copied().collect();
        let stream = build_stream(config, &ck, &test, &group)?;
        let mut adapter = Adapter::new(&ck.model, cfg)?;
        let result = run_with(&mut adapter, &stream)?;
        write_records(&mut log, &mut preds, &result, &stream)?;
        for d in &result.domains {
            domains_json.insert(d.name.clone(), json!(d.accuracy()));
        }
        per_severity.insert(severity.to_string(), json!(result.accuracy()));
        correct += result.correct();
        total += result.total();
    }
    log.finish()?;
    preds.finish()?;
    Ok(json!({
        "method": cfg.method.name(),
        "reset": cfg.reset.name(),
        "radius": format!("{:?}", cfg.radius),
        "accuracy": if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        "severities": per_severity,
        "domains": domains_json,
    }))
}

fn write_records(log: &mut Table, preds: &mut Table, result: &AdaptationRun, stream: &[Domain<f32>]) -> Result<()> {
    for r in &result.records {
        log.row([
            r.domain.clone(),
            r.batch_idx.to_string(),
            result.method.name().to_string(),
            r.online_acc.to_string(),
            r.cum_acc.to_string(),
            r.mean_entropy.to_string(),
            r.filtered.to_string(),
        ])?;
        let labels = stream
            .iter()
            .find(|d| d.name == r.domain)
            .and_then(|d| d.batches.get(r.batch_idx))
            .map(|b| b.labels.as_slice())
            .unwrap_or(&[]);
        for (i, p) in r.predictions.iter().enumerate() {
            let label = labels.get(i).map(ToString::to_string).unwrap_or_default();
            preds.row([r.domain.clone(), r.batch_idx.to_string(), i.to_string(), p.to_string(), label])?;
        }
    }
    Ok(())
}

fn read_input(config: &RunConfig) -> Result<Tensor<f32>> {
    let path = config
        .input
        .as_deref()
        .ok_or_else(|| Error::Usage("--input is required".into()))?;
    fqt::read(path)
}

fn decompose_cmd(config: &RunConfig, run: &mut Run) -> Result<Value> {
    let input = read_input(config)?;
    let dims = input.dims().to_vec();
    let work = match dims.len() {
        2 => input.reshape(&[1, dims[0], dims[1]])?,
        3 | 4 => input,
        _ => return Err(Error::Data(format!("decompose expects 2 to 4 dims, got {dims:?}"))),
    };
    let parts = decompose(&work, config.analysis.radius)?;
    let (lfc, hfc) = (parts.lfc.reshape(&dims)?, parts.hfc.reshape(&dims)?);
    fqt::write(&run.path("lfc.fqt"), &lfc)?;
    fqt::write(&run.path("hfc.fqt"), &hfc)?;
    Ok(json!({
        "dims": dims,
        "radius": config.analysis.radius,
        "lfc_energy": freqcoda_core::spectral::energy(lfc.data()),
        "hfc_energy": freqcoda_core::spectral::energy(hfc.data()),
    }))
}

fn corrupt_cmd(config: &RunConfig, seed: u64, run: &mut Run) -> Result<Value> {
    let input = read_input(config)?;
    let dims = input.dims().to_vec();
    let batch = match dims.len() {
        3 => input.reshape(&[1, dims[0], dims[1], dims[2]])?,
        4 => input,
        _ => return Err(Error::Data(format!("corrupt expects C x H x W or N x C x H x W, got {dims:?}"))),
    };
    let n = batch.dims()[0];
    let ds = Dataset::new("input", batch, vec![0; n], 1)?;
    let pool = pool()?;
    let mut written = Vec::new();
    for spec in corruption_specs(config, seed)? {
        if spec.kind == freqcoda_core::data::CorruptionKind::Identity {
            continue;
        }
        let out = corrupt_dataset_par(&pool, &ds, &spec)?;
        let name = format!("{}.fqt", spec.label());
        fqt::write(&run.path(&name), &out.images.reshape(&dims)?)?;
        written.push(name);
    }
    Ok(json!({ "images": n, "outputs": written }))
}

fn analyze_distance(config: &RunConfig, seed: u64, run: &mut Run) -> Result<Value> {
    let (_, test) = load_splits(config, seed)?;
    let specs = corruption_specs(config, seed)?;
    let mut summary = serde_json::Map::new();
    for band in [Band::Low, Band::High] {
        let a = frequency_distance_matrix(&test, &specs, config.analysis.radius, band, config.analysis.samples_per_class)?;
        write_matrix(&run.path(&format!("distance_{}.csv", band.name())), &a.overall)?;
        let per_class: Vec<Value> = a
            .per_class
            .iter()
            .map(|(c, m)| json!({ "class": c, "mean_off_diagonal": m.mean_off_diagonal() }))
            .collect();
        summary.insert(
            band.name().to_string(),
            json!({ "mean_off_diagonal": a.overall.mean_off_diagonal(), "per_class": per_class }),
        );
    }
    Ok(Value::Object(summary))
}

/// Adapt continually over the whole stream and compare BN means with the source.
pub fn adapted_sse(model: &ResNet<f32>, stream: &[Domain<f32>], cfg: AdaptConfig) -> Result<SseReport> {
    let cfg = AdaptConfig {
        reset: ResetPolicy::Continual,
        ..cfg
    };
    let mut adapter = Adapter::new(model, cfg)?;
    run_with(&mut adapter, stream)?;
    Ok(bn_sse(&source_stats(model), &adapted_stats(adapter.model()))?)
}

fn analyze_bn_sse(config: &RunConfig, seed: u64, run: &mut Run) -> Result<Value> {
    let primary = read_checkpoint(config.checkpoint.as_deref(), "--checkpoint")?;
    let reference = match config.reference_checkpoint.as_deref() {
        Some(p) => Some(Checkpoint::read(p)?),
        None => None,
    };
    let (_, test) = load_splits(config, seed)?;
    let specs = corruption_specs(config, seed)?;
    let mut table = Table::create(&run.path("bn_sse.csv"), &["model", "method", "layer", "sse"])?;
    let mut summary = serde_json::Map::new();
    let entries = std::iter::once(("primary", &primary, config.adapt.method))
        .chain(reference.iter().map(|r| ("reference", r, config.analysis.reference_method)));
    for (role, ck, method) in entries {
        check_compatible(ck, &test)?;
        let stream = build_stream(config, ck, &test, &specs)?;
        let cfg = adapt_config(config, method, radius_rule(config, ck)?);
        let report = adapted_sse(&ck.model, &stream, cfg)?;
        for (bn, sse) in ck.model.batchnorms().iter().zip(&report.per_layer) {
            table.row([role.to_string(), method.name().to_string(), bn.name.clone(), sse.to_string()])?;
        }
        summary.insert(role.to_string(), json!({ "method": method.name(), "total": report.total }));
    }
    table.finish()?;
    Ok(Value::Object(summary))
}
