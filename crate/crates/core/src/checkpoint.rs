//! Checkpoint file format (little-endian throughout):
//!
//! ```text
//! magic  b"RMPS"
//! u32    format version (currently 1)
//! u32    tensor count
//! per tensor:
//!   u16  name length, then that many UTF-8 name bytes
//!   u8   rank, then rank x u32 extents
//!   f64  data, row-major
//! ```
//!
//! The named table holds every model weight in canonical visit order,
//! followed by optimizer state (`opt.step`, `opt.m.<param>`, `opt.v.<param>`)
//! and the config snapshot (`meta.config`, the canonical config text stored
//! one byte per element). Save -> load roundtrips are bit-identical.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use miniseg_tensor::Tensor;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{build_model, Model};
use crate::params::{collect, ParamVisit};
use crate::train::{AdamW, Moments};

pub const MAGIC: [u8; 4] = *b"RMPS";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub struct CheckpointData {
    pub version: u32,
    pub config: ModelConfig,
    pub step: u64,
    tensors: BTreeMap<String, Tensor>,
}

impl CheckpointData {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }
}

fn config_tensor(cfg: &ModelConfig) -> Tensor {
    let bytes = cfg.to_text().into_bytes();
    let data: Vec<f64> = bytes.iter().map(|&b| b as f64).collect();
    Tensor::from_vec(&[data.len()], data).expect("config tensor")
}

fn config_from_tensor(t: &Tensor) -> Result<ModelConfig> {
    let bytes: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Checkpoint("config snapshot is not UTF-8".into()))?;
    ModelConfig::from_text(&text)
}

/// Serialize model weights, optimizer state, and the config snapshot.
pub fn save(model: &Model, opt: &AdamW, path: &Path) -> Result<()> {
    let mut table: Vec<(String, Tensor)> = collect(model);
    table.push((
        "opt.step".to_string(),
        Tensor::scalar(opt.step as f64),
    ));
    for (name, m) in &opt.moments {
        let shape = [m.m.len()];
        table.push((
            format!("opt.m.{name}"),
            Tensor::from_vec(&shape, m.m.clone())?,
        ));
        table.push((
            format!("opt.v.{name}"),
            Tensor::from_vec(&shape, m.v.clone())?,
        ));
    }
    table.push(("meta.config".to_string(), config_tensor(&model.cfg)));

    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (name, t) in &table {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("tensor name too long: {name}")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Parse a checkpoint file; structural problems are reported without
/// producing a partial result.
pub fn load(path: &Path) -> Result<CheckpointData> {
    let bytes = std::fs::read(path)?;
    let mut cursor = std::io::Cursor::new(bytes.as_slice());

    let mut magic = [0u8; 4];
    read_exact(&mut cursor, &mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?} (expected {MAGIC:?})"
        )));
    }
    let version = read_u32(&mut cursor)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let count = read_u32(&mut cursor)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u16(&mut cursor)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut cursor, &mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let mut rank_byte = [0u8; 1];
        read_exact(&mut cursor, &mut rank_byte)?;
        let rank = rank_byte[0] as usize;
        if rank == 0 || rank > 5 {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has invalid rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut cursor)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(read_f64(&mut cursor)?);
        }
        if tensors
            .insert(name.clone(), Tensor::from_vec(&shape, data)?)
            .is_some()
        {
            return Err(Error::Checkpoint(format!("duplicate tensor '{name}'")));
        }
    }

    let config = config_from_tensor(
        tensors
            .get("meta.config")
            .ok_or_else(|| Error::Checkpoint("missing config snapshot".into()))?,
    )?;
    let step = tensors
        .get("opt.step")
        .map(|t| t.scalar_value() as u64)
        .ok_or_else(|| Error::Checkpoint("missing optimizer step".into()))?;

    Ok(CheckpointData {
        version,
        config,
        step,
        tensors,
    })
}

fn read_exact(c: &mut std::io::Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    c.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint file".into()))
}

fn read_u16(c: &mut std::io::Cursor<&[u8]>) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(c, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(c: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(c, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(c: &mut std::io::Cursor<&[u8]>) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(c, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Copy checkpoint weights into an existing model. The stored config must
/// match the model's; the first differing field is named in the error.
pub fn restore_model(data: &CheckpointData, model: &mut Model) -> Result<()> {
    if let Some(field) = data.config.first_mismatch(&model.cfg) {
        return Err(Error::Checkpoint(format!(
            "config incompatibility at {field}"
        )));
    }
    let mut err = None;
    model.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match data.tensors.get(name) {
            Some(saved) if saved.shape() == t.shape() => {
                t.data_mut().copy_from_slice(saved.data());
            }
            Some(saved) => {
                err = Some(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?} in the checkpoint but {:?} in the model",
                    saved.shape(),
                    t.shape()
                )));
            }
            None => {
                err = Some(Error::Checkpoint(format!(
                    "checkpoint is missing tensor '{name}'"
                )));
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Rebuild optimizer state from a checkpoint for the given model.
pub fn restore_optimizer(data: &CheckpointData, model: &Model) -> Result<AdamW> {
    let mut opt = AdamW::new(data.config.train);
    opt.step = data.step;
    let mut err = None;
    let mut names = Vec::new();
    model.visit("", &mut |name, _| names.push(name.to_string()));
    for name in names {
        let (m, v) = (
            data.tensors.get(&format!("opt.m.{name}")),
            data.tensors.get(&format!("opt.v.{name}")),
        );
        match (m, v) {
            (Some(m), Some(v)) => {
                opt.moments.insert(
                    name,
                    Moments {
                        m: m.data().to_vec(),
                        v: v.data().to_vec(),
                    },
                );
            }
            (None, None) => {} // parameter never updated before the save
            _ => {
                err = Some(Error::Checkpoint(format!(
                    "optimizer state for '{name}' is half missing"
                )));
            }
        }
    }
    match err {
        Some(e) => Err(e),
        None => Ok(opt),
    }
}

/// Build a fresh model from the checkpoint's own config snapshot.
pub fn load_model(path: &Path) -> Result<(Model, AdamW, CheckpointData)> {
    let data = load(path)?;
    let mut model = build_model(&data.config, 0)?;
    restore_model(&data, &mut model)?;
    let opt = restore_optimizer(&data, &model)?;
    Ok((model, opt, data))
}
