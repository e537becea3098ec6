//! Dataset ingestion and parallel corruption.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use freqcoda_core::data::{corrupt_with, parse_records, CorruptionSpec, Dataset, RECORD_BYTES};
use freqcoda_core::Tensor;

use crate::error::{Error, Result};

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

fn read_batches(dir: &Path, files: &[&str], name: &str) -> Result<Dataset> {
    let mut bytes = Vec::with_capacity(files.len() * 10_000 * RECORD_BYTES);
    for file in files {
        let path = dir.join(file);
        if !path.is_file() {
            return Err(Error::Data(format!("CIFAR-10 file missing: {}", path.display())));
        }
        let chunk = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if chunk.len() % RECORD_BYTES != 0 {
            return Err(Error::Data(format!(
                "{}: length {} is not a multiple of {RECORD_BYTES}",
                path.display(),
                chunk.len()
            )));
        }
        bytes.extend_from_slice(&chunk);
    }
    Ok(parse_records(&bytes, name)?)
}

/// The CIFAR-10 binary training and test splits found in `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = read_batches(dir, &TRAIN_FILES, "cifar10-train")?;
    let test = read_batches(dir, &[TEST_FILE], "cifar10-test")?;
    Ok((train, test))
}

/// Number of worker threads: `FREQCODA_THREADS` if set and positive, else all cores.
pub fn thread_count() -> usize {
    std::env::var("FREQCODA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// A dedicated pool sized by [`thread_count`].
pub fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Same output as the sequential core routine, with images corrupted in parallel.
pub fn corrupt_dataset_par(pool: &rayon::ThreadPool, dataset: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    let params = spec.kind.parameters(spec.severity)?;
    let (c, h, w) = dataset.image_dims();
    let per = c * h * w;
    let mut pixels = vec![0.0f32; dataset.images.len()];
    pool.install(|| {
        pixels
            .par_chunks_mut(per)
            .enumerate()
            .try_for_each(|(i, out)| -> Result<()> {
                let img = Tensor::from_vec(&[c, h, w], dataset.images.sample(i).to_vec())?;
                out.copy_from_slice(corrupt_with(&img, spec.kind, &params, spec.seed ^ i as u64)?.data());
                Ok(())
            })
    })?;
    Ok(Dataset {
        name: format!("{}/{}", dataset.name, spec.label()),
        images: Tensor::from_vec(dataset.images.dims(), pixels)?,
        labels: dataset.labels.clone(),
        num_classes: dataset.num_classes,
    })
}
