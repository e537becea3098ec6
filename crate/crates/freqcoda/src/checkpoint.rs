//! `FQCK` checkpoints: magic, u32 version, u32 tensor count, then per tensor
//! u16 name length, name bytes, u8 dtype tag, u8 rank, u32 dims and an f32
//! payload, all little-endian.
//!
//! Besides model parameters and buffers a checkpoint carries three `meta.*`
//! tensors describing how to rebuild the network and feed it.

use std::fs;
use std::path::Path;

use freqcoda_core::data::ChannelNorm;
use freqcoda_core::nn::NamedTensor;
use freqcoda_core::quant::wrap_quantized;
use freqcoda_core::train::FilterMode;
use freqcoda_core::{build_resnet, ResNet, ResNetConfig, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FQCK";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Data(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.tensor.rank()).map_err(|_| Error::Data(format!("{}: rank too large", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(DTYPE_F32);
        out.push(rank);
        for &d in t.tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(Error::Data(format!("checkpoint truncated at byte {}", self.at))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Data("not an FQCK checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Data(format!("{name}: unsupported dtype tag {dtype}")));
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Data(format!("{name}: dims overflow")))?;
        let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Data(format!("{name}: dims overflow")))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(NamedTensor {
            name,
            tensor: Tensor::from_vec(&dims, data)?,
        });
    }
    if r.at != bytes.len() {
        return Err(Error::Data(format!("{} trailing bytes after checkpoint", bytes.len() - r.at)));
    }
    Ok(out)
}

/// A trained model with what is needed to feed it inputs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ResNet<f32>,
    pub filter: FilterMode,
    /// Training filter radius in bins at `input_size`.
    pub radius: Option<f64>,
    /// `(H, W)` of training inputs.
    pub input_size: (usize, usize),
    pub norm: ChannelNorm,
}

fn filter_code(f: FilterMode) -> f32 {
    match f {
        FilterMode::None => 0.0,
        FilterMode::Low => 1.0,
        FilterMode::High => 2.0,
    }
}

fn meta(name: &str, values: Vec<f32>) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        tensor: Tensor::from_vec(&[values.len()], values).expect("1-d meta tensor"),
    }
}

fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a [f32]> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .map(|t| t.tensor.data())
        .ok_or_else(|| Error::Data(format!("checkpoint lacks {name}")))
}

fn as_count(v: f32, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::Data(format!("checkpoint {what} is not a count: {v}")))
    }
}

impl Checkpoint {
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let cfg = &self.model.config;
        let mut arch = vec![
            cfg.num_classes as f32,
            cfg.in_channels as f32,
            cfg.base_width as f32,
            self.model.bits.unwrap_or(0) as f32,
        ];
        arch.extend(cfg.depth_blocks.iter().map(|&b| b as f32));
        let train = vec![
            filter_code(self.filter),
            self.radius.map_or(-1.0, |r| r as f32),
            self.input_size.0 as f32,
            self.input_size.1 as f32,
        ];
        let mut norm = self.norm.mean.clone();
        norm.extend_from_slice(&self.norm.std);
        let mut out = vec![meta("meta.arch", arch), meta("meta.train", train), meta("meta.norm", norm)];
        out.extend(self.model.clone().state());
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let arch = find(tensors, "meta.arch")?;
        if arch.len() < 5 {
            return Err(Error::Data("meta.arch is too short".into()));
        }
        let config = ResNetConfig {
            num_classes: as_count(arch[0], "class count")?,
            in_channels: as_count(arch[1], "channel count")?,
            base_width: as_count(arch[2], "width")?,
            depth_blocks: arch[4..].iter().map(|&b| as_count(b, "block count")).collect::<Result<_>>()?,
            seed: 0,
        };
        let bits = as_count(arch[3], "bit width")? as u32;
        let train = find(tensors, "meta.train")?;
        if train.len() != 4 {
            return Err(Error::Data("meta.train must hold 4 values".into()));
        }
        let filter = match train[0] {
            0.0 => FilterMode::None,
            1.0 => FilterMode::Low,
            2.0 => FilterMode::High,
            v => return Err(Error::Data(format!("unknown filter code {v}"))),
        };
        let radius = (train[1] >= 0.0).then_some(train[1] as f64);
        let input_size = (as_count(train[2], "height")?, as_count(train[3], "width")?);
        let norm = find(tensors, "meta.norm")?;
        if norm.len() != 2 * config.in_channels {
            return Err(Error::Data("meta.norm does not match the channel count".into()));
        }
        let (mean, std) = norm.split_at(config.in_channels);
        let mut model = build_resnet(&config).map_err(|e| Error::Data(e.to_string()))?;
        if bits > 0 {
            model = wrap_quantized(model, bits).map_err(|e| Error::Data(e.to_string()))?;
        }
        model.load_state(tensors)?;
        Ok(Checkpoint {
            model,
            filter,
            radius,
            input_size,
            norm: ChannelNorm {
                mean: mean.to_vec(),
                std: std.to_vec(),
            },
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_tensors(&bytes)
            .and_then(|t| Checkpoint::from_tensors(&t))
            .map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
                other => other,
            })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = encode_tensors(&self.to_tensors())?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
