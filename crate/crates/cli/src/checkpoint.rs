//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CIVREC1"
//! u64 users, u64 items, u64 dim, u8 variant, u64 seed, u64 epoch, u64 adam_step
//! u32 config_len, config text (key=value lines)
//! u32 block_count, then per block:
//!   u32 name_len, name, u32 rank, u64 dims[rank], f32 values[prod(dims)]
//! ```
//!
//! Blocks hold every parameter under its own name, then the Adam moments
//! as `adam.m.<name>` and `adam.v.<name>`.

use std::fs;
use std::path::Path;

use civrec_core::data::DatasetBundle;
use civrec_core::diffcore::AdamState;
use civrec_core::trainer::{ModelState, Variant};
use thiserror::Error;

use crate::config::RunConfig;

pub const MAGIC: &[u8; 7] = b"CIVREC1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic or version)")]
    BadMagic,
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(
        "checkpoint is {ck_users} users x {ck_items} items (dim {ck_dim}) but the data has {users} users x {items} items"
    )]
    DimMismatch {
        ck_users: usize,
        ck_items: usize,
        ck_dim: usize,
        users: usize,
        items: usize,
    },
    #[error("block {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Model(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub variant: Variant,
    pub seed: u64,
    pub epoch: usize,
    pub adam_step: u64,
    pub config: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn variant_code(v: Variant) -> u8 {
    Variant::ALL.iter().position(|&x| x == v).unwrap_or(0) as u8
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_block(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    put_str(out, name);
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes `model`; values are stored as 32-bit floats.
pub fn encode(model: &ModelState, config: &RunConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u64(&mut out, model.n_users as u64);
    put_u64(&mut out, model.n_items as u64);
    put_u64(&mut out, model.config.backbone.dim as u64);
    out.push(variant_code(model.config.variant));
    put_u64(&mut out, model.config.seed);
    put_u64(&mut out, model.epoch as u64);
    put_u64(&mut out, model.adam.step_count());
    let mut cfg = config.clone();
    cfg.train = model.config.clone();
    put_str(&mut out, &cfg.to_text());

    let n = model.params.len();
    put_u32(&mut out, (3 * n) as u32);
    for (_, name, t) in model.params.iter() {
        put_block(&mut out, name, t.shape(), t.values());
    }
    for (prefix, moments) in [("adam.m.", model.adam.first_moments()), ("adam.v.", model.adam.second_moments())] {
        for ((_, name, t), m) in model.params.iter().zip(moments) {
            put_block(&mut out, &format!("{prefix}{name}"), t.shape(), m);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated(self.pos));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Corrupt("non-utf8 string".into()))
    }
}

/// Parses a checkpoint into its header and raw blocks.
pub fn decode(bytes: &[u8]) -> Result<(Header, Vec<Block>), CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let n_users = r.u64()? as usize;
    let n_items = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let code = r.u8()? as usize;
    let variant = *Variant::ALL
        .get(code)
        .ok_or_else(|| CheckpointError::Corrupt(format!("variant code {code}")))?;
    let seed = r.u64()?;
    let epoch = r.u64()? as usize;
    let adam_step = r.u64()?;
    let config = r.string()?;
    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank > 2 {
            return Err(CheckpointError::Corrupt(format!("block {name} has rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let len = shape.iter().product::<usize>();
        let raw = r.take(len.checked_mul(4).ok_or(CheckpointError::Truncated(r.pos))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        blocks.push(Block { name, shape, values });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let header = Header {
        n_users,
        n_items,
        dim,
        variant,
        seed,
        epoch,
        adam_step,
        config,
    };
    Ok((header, blocks))
}

/// Rebuilds a model for `bundle` from checkpoint bytes.
pub fn restore(bytes: &[u8], bundle: &DatasetBundle) -> Result<(ModelState, RunConfig), CheckpointError> {
    let (h, blocks) = decode(bytes)?;
    if h.n_users != bundle.n_users() || h.n_items != bundle.n_items() {
        return Err(CheckpointError::DimMismatch {
            ck_users: h.n_users,
            ck_items: h.n_items,
            ck_dim: h.dim,
            users: bundle.n_users(),
            items: bundle.n_items(),
        });
    }
    let cfg = RunConfig::parse(&h.config).map_err(|e| CheckpointError::Corrupt(format!("embedded config: {e}")))?;
    if cfg.train.backbone.dim != h.dim || cfg.train.variant != h.variant || cfg.train.seed != h.seed {
        return Err(CheckpointError::Corrupt("header disagrees with embedded config".into()));
    }
    let mut model = ModelState::new(cfg.train.clone(), bundle).map_err(|e| CheckpointError::Model(e.to_string()))?;
    let names: Vec<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
    let expected: Vec<Vec<usize>> = model.params.iter().map(|(_, _, t)| t.shape().to_vec()).collect();
    if blocks.len() != 3 * names.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} blocks, expected {}",
            blocks.len(),
            3 * names.len()
        )));
    }
    let widen = |b: &Block| b.values.iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let mut first = Vec::with_capacity(names.len());
    let mut second = Vec::with_capacity(names.len());
    for (j, block) in blocks.iter().enumerate() {
        let k = j % names.len();
        let want = match j / names.len() {
            0 => names[k].clone(),
            1 => format!("adam.m.{}", names[k]),
            _ => format!("adam.v.{}", names[k]),
        };
        if block.name != want {
            return Err(CheckpointError::Corrupt(format!("expected block {want}, found {}", block.name)));
        }
        if block.shape != expected[k] {
            return Err(CheckpointError::ShapeMismatch {
                name: block.name.clone(),
                found: block.shape.clone(),
                expected: expected[k].clone(),
            });
        }
        match j / names.len() {
            0 => model
                .set_param(&names[k], &widen(block))
                .map_err(|e| CheckpointError::Model(e.to_string()))?,
            1 => first.push(widen(block)),
            _ => second.push(widen(block)),
        }
    }
    model.adam = AdamState::from_parts(h.adam_step, first, second);
    model.epoch = h.epoch;
    Ok((model, cfg))
}

/// Rounds every stored value to the nearest 32-bit float, so the in-memory
/// model equals what a save and load would produce.
pub fn quantize(model: &mut ModelState) {
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.get_mut(id).values_mut() {
            *v = *v as f32 as f64;
        }
    }
    let round = |m: &[Vec<f64>]| -> Vec<Vec<f64>> { m.iter().map(|r| r.iter().map(|&v| v as f32 as f64).collect()).collect() };
    let first = round(model.adam.first_moments());
    let second = round(model.adam.second_moments());
    model.adam = AdamState::from_parts(model.adam.step_count(), first, second);
}

/// Writes atomically: the file appears only once fully written.
pub fn save(path: &Path, model: &ModelState, config: &RunConfig) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("partial");
    fs::write(&tmp, encode(model, config)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load(path: &Path, bundle: &DatasetBundle) -> Result<(ModelState, RunConfig), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    restore(&bytes, bundle)
}
