//! Argument parsing and merging flags over the JSON configuration.

use std::collections::hash_map::RandomState;
use std::hash::BuildHasher;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};

use freqcoda_core::data::CorruptionKind;
use freqcoda_core::train::FilterMode;
use freqcoda_core::tta::{Method, ResetPolicy};

use crate::commands::{execute, Subcommand};
use crate::config::{DatasetKind, RunConfig};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "freqcoda", version, about = "Frequency-composed quantization-aware training and test-time adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// Train a (quantized) model, optionally on band-filtered inputs.
    Train(Flags),
    /// Adapt a checkpoint over a corrupted test stream.
    Adapt(Flags),
    /// Accuracy of a checkpoint on clean and corrupted test data.
    Eval(Flags),
    /// Split an FQT0 image tensor into low- and high-frequency parts.
    Decompose(Flags),
    /// Apply corruptions to an FQT0 image tensor.
    Corrupt(Flags),
    /// Spectral distance matrices between corrupted domains.
    AnalyzeDistance(Flags),
    /// BN mean drift between source and adapted statistics.
    AnalyzeBnSse(Flags),
}

impl Command {
    pub fn split(self) -> (Subcommand, Flags) {
        match self {
            Command::Train(f) => (Subcommand::Train, f),
            Command::Adapt(f) => (Subcommand::Adapt, f),
            Command::Eval(f) => (Subcommand::Eval, f),
            Command::Decompose(f) => (Subcommand::Decompose, f),
            Command::Corrupt(f) => (Subcommand::Corrupt, f),
            Command::AnalyzeDistance(f) => (Subcommand::AnalyzeDistance, f),
            Command::AnalyzeBnSse(f) => (Subcommand::AnalyzeBnSse, f),
        }
    }
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    match s {
        "cifar10" => Ok(DatasetKind::Cifar10),
        "synthetic" => Ok(DatasetKind::Synthetic),
        _ => Err(format!("unknown dataset '{s}' (cifar10 or synthetic)")),
    }
}

fn parse_severities(s: &str) -> Result<Vec<u8>, String> {
    if s == "all" {
        return Ok(vec![1, 2, 3, 4, 5]);
    }
    s.split(',')
        .map(|p| match p.trim().parse::<u8>() {
            Ok(v) if (1..=5).contains(&v) => Ok(v),
            _ => Err(format!("severity must be 1..5 or 'all', got '{p}'")),
        })
        .collect()
}

fn parse_kinds(s: &str) -> Result<Vec<CorruptionKind>, String> {
    if s == "all" {
        return Ok(CorruptionKind::SHIFTS.to_vec());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|e| format!("{e}"))).collect()
}

fn parse_bits(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(b @ (0 | 2 | 4 | 8)) => Ok(b),
        _ => Err(format!("bits must be 0, 2, 4 or 8, got '{s}'")),
    }
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_bits)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub filter: Option<FilterMode>,
    /// Band radius in bins; applies to training, FABN or analysis depending on the subcommand.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// One severity, a comma list, or `all`.
    #[arg(long, value_parser = parse_severities)]
    pub severity: Option<::std::vec::Vec<u8>>,
    /// Comma list of corruption kinds, or `all`.
    #[arg(long, value_parser = parse_kinds)]
    pub corruptions: Option<::std::vec::Vec<CorruptionKind>>,
    #[arg(long)]
    pub reset: Option<ResetPolicy>,
    /// Use `--radius` as bins at every FABN layer.
    #[arg(long)]
    pub absolute_radius: bool,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub reference_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Class count of the synthetic dataset.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Batches per domain to adapt on.
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub prefilter_radius: Option<f64>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
}

/// Fold `flags` into `config` for `cmd`.
pub fn merge(cmd: Subcommand, mut config: RunConfig, flags: Flags) -> RunConfig {
    macro_rules! set {
        ($flag:expr => $($field:tt)+) => {
            if let Some(v) = $flag {
                config.$($field)+ = v;
            }
        };
    }
    if let Some(seed) = flags.seed {
        config.seed = Some(seed);
    }
    if flags.out_dir.is_some() {
        config.out_dir = flags.out_dir;
    }
    if flags.checkpoint.is_some() {
        config.checkpoint = flags.checkpoint;
    }
    if flags.reference_checkpoint.is_some() {
        config.reference_checkpoint = flags.reference_checkpoint;
    }
    if flags.input.is_some() {
        config.input = flags.input;
    }
    if flags.data_dir.is_some() {
        config.dataset.data_dir = flags.data_dir;
    }
    set!(flags.dataset => dataset.kind);
    if flags.train_size.is_some() {
        config.dataset.train_size = flags.train_size;
    }
    if flags.test_size.is_some() {
        config.dataset.test_size = flags.test_size;
    }
    set!(flags.classes => dataset.synthetic.num_classes);
    set!(flags.bits => train.bits);
    set!(flags.filter => train.filter);
    set!(flags.lr => train.lr);
    if let Some(epochs) = flags.epochs {
        config.train.epochs = epochs;
        if let freqcoda_core::optim::LrSchedule::Cosine { t_max, .. } = &mut config.train.schedule {
            *t_max = epochs;
        }
    }
    set!(flags.method => adapt.method);
    set!(flags.alpha => adapt.alpha);
    set!(flags.reset => adapt.reset);
    if flags.absolute_radius {
        config.adapt.absolute_radius = true;
    }
    if flags.batches.is_some() {
        config.adapt.batches = flags.batches;
    }
    if flags.prefilter_radius.is_some() {
        config.adapt.prefilter_radius = flags.prefilter_radius;
    }
    set!(flags.severity => corruption.severities);
    set!(flags.corruptions => corruption.kinds);
    set!(flags.samples_per_class => analysis.samples_per_class);
    match cmd {
        Subcommand::Train => {
            set!(flags.batch_size => train.batch_size);
            if flags.radius.is_some() {
                config.train.radius = flags.radius;
            }
        }
        Subcommand::Adapt | Subcommand::AnalyzeBnSse | Subcommand::Eval => {
            set!(flags.batch_size => adapt.batch_size);
            if flags.radius.is_some() {
                config.adapt.radius = flags.radius;
            }
        }
        Subcommand::Decompose | Subcommand::Corrupt | Subcommand::AnalyzeDistance => {
            set!(flags.radius => analysis.radius);
        }
    }
    config
}

fn draw_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    RandomState::new().hash_one(nanos)
}

/// Parse, merge, fill the seed and run. Returns the manifest path.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let (cmd, flags) = cli.command.split();
    let base = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut config = merge(cmd, base, flags);
    let seed = *config.seed.get_or_insert_with(draw_seed);
    config.train.seed = seed;
    execute(cmd, &config)
}

/// Entry point used by the binary.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let err: &Error = &e;
            ExitCode::from(err.exit_code())
        }
    }
}
