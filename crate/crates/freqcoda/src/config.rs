//! JSON run configuration. Every command-line flag has a field here; flags
//! are merged on top of the file and the merged result goes to the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use freqcoda_core::data::{CorruptionKind, SynthConfig};
use freqcoda_core::train::TrainConfig;
use freqcoda_core::tta::{Method, ResetPolicy};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Cifar10,
    #[default]
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub data_dir: Option<PathBuf>,
    /// Training images; CIFAR-10 takes a class-balanced prefix.
    pub train_size: Option<usize>,
    /// Test images; CIFAR-10 takes a class-balanced prefix.
    pub test_size: Option<usize>,
    /// Generator settings when `kind` is synthetic.
    pub synthetic: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Synthetic,
            data_dir: None,
            train_size: None,
            test_size: None,
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSection {
    pub method: Method,
    pub alpha: f64,
    pub batch_size: usize,
    pub reset: ResetPolicy,
    /// FABN radius; `None` derives it from the checkpoint's training radius.
    pub radius: Option<f64>,
    /// Use `radius` as bins at every layer instead of scaling it with feature size.
    pub absolute_radius: bool,
    /// Batches per domain; `None` uses all.
    pub batches: Option<usize>,
    pub tent_lr: f64,
    pub sar_lr: f64,
    pub sar_rho: f64,
    /// `None` means `0.4 ln C`.
    pub sar_e0: Option<f64>,
    /// Low-pass the test inputs at this radius before adapting.
    pub prefilter_radius: Option<f64>,
}

impl Default for AdaptSection {
    fn default() -> Self {
        AdaptSection {
            method: Method::Fabn,
            alpha: 0.1,
            batch_size: 64,
            reset: ResetPolicy::PerDomain,
            radius: None,
            absolute_radius: false,
            batches: None,
            tent_lr: 1e-3,
            sar_lr: 0.00025,
            sar_rho: 0.05,
            sar_e0: None,
            prefilter_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSection {
    pub kinds: Vec<CorruptionKind>,
    /// Each severity is run separately; results are also averaged.
    pub severities: Vec<u8>,
}

impl Default for CorruptionSection {
    fn default() -> Self {
        CorruptionSection {
            kinds: CorruptionKind::SHIFTS.to_vec(),
            severities: vec![3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Band radius in bins for `decompose` and `analyze-distance`.
    pub radius: f64,
    pub samples_per_class: usize,
    /// Adaptation applied to the reference checkpoint in `analyze-bn-sse`.
    pub reference_method: Method,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            radius: 8.0,
            samples_per_class: 8,
            reference_method: Method::Norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Second checkpoint for `analyze-bn-sse` comparisons.
    pub reference_checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub adapt: AdaptSection,
    pub corruption: CorruptionSection,
    pub analysis: AnalysisSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.adapt.batch_size == 0 {
            return Err(Error::Config("adapt batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.adapt.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.adapt.alpha)));
        }
        if let Some(s) = self.corruption.severities.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::Config(format!("severity must lie in 1..=5, got {s}")));
        }
        if self.corruption.severities.is_empty() {
            return Err(Error::Config("no severities given".into()));
        }
        if self.dataset.kind == DatasetKind::Cifar10 && self.dataset.data_dir.is_none() {
            return Err(Error::Config("dataset cifar10 needs --data-dir".into()));
        }
        if !(self.analysis.radius >= 0.0) {
            return Err(Error::Config("radius must be >= 0".into()));
        }
        Ok(())
    }
}
