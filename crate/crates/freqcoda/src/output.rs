//! CSV tables and the run manifest.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use freqcoda_core::analysis::DistanceMatrix;

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// CSV writer that reports failures with the file path.
pub struct Table {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut t = Table {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(file),
        };
        t.row(header)?;
        Ok(t)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| self.err(e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn err(&self, e: csv::Error) -> Error {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&self.path, io),
            other => Error::Data(format!("{}: {other:?}", self.path.display())),
        }
    }
}

/// A matrix as CSV: a header of domain labels, then one labelled row per domain.
pub fn write_matrix(path: &Path, m: &DistanceMatrix) -> Result<()> {
    let mut header = vec!["domain"];
    header.extend(m.labels.iter().map(String::as_str));
    let mut t = Table::create(path, &header)?;
    for (i, label) in m.labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..m.size()).map(|j| format!("{}", m.get(i, j))));
        t.row(&row)?;
    }
    t.finish()
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub subcommand: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config: &'a RunConfig,
    /// File names inside the output directory.
    pub artifacts: Vec<String>,
    pub wall_seconds: f64,
    pub summary: serde_json::Value,
}

/// Write `manifest.json` via a temporary file and a rename.
pub fn write_manifest(out_dir: &Path, manifest: &Manifest<'_>) -> Result<PathBuf> {
    let path = out_dir.join("manifest.json");
    let tmp = out_dir.join(".manifest.json.tmp");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Data(e.to_string()))?;
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
