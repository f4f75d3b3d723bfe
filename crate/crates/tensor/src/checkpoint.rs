//! Binary weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"GFCK"
//! u32     format version
//! u64     header length, followed by that many bytes of JSON header
//! u32     parameter count
//! per parameter:
//!   u32 name length, name (UTF-8)
//!   u32 rank, rank x u64 dims
//!   product(dims) x f64
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EngineError, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GFCK";
const FORMAT_VERSION: u32 = 1;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub engine_version: String,
    pub config_hash: String,
    /// Model-specific payload (config, normalisation stats, running stats).
    pub metadata: serde_json::Value,
}

impl CheckpointHeader {
    pub fn new(config: &serde_json::Value, metadata: serde_json::Value) -> Self {
        Self {
            engine_version: ENGINE_VERSION.to_string(),
            config_hash: config_hash(config),
            metadata,
        }
    }
}

/// SHA-256 of the canonical JSON serialisation, hex encoded.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json value serialises");
    hex::encode(Sha256::digest(&bytes))
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    header: &CheckpointHeader,
    store: &ParamStore,
) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    let json = serde_json::to_vec(header).map_err(|e| EngineError::Format(e.to_string()))?;
    write_u64(w, json.len() as u64)?;
    w.write_all(&json)?;
    write_u32(w, store.len() as u32)?;
    for (_, name, t) in store.iter() {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, t.rank() as u32)?;
        for &d in t.shape() {
            write_u64(w, d as u64)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(CheckpointHeader, ParamStore)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EngineError::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(EngineError::Format(format!("unsupported version {version}")));
    }
    let len = read_u64(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| EngineError::Format(e.to_string()))?;
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = read_u32(r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| EngineError::Format(e.to_string()))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok((header, store))
}

pub fn save_checkpoint(
    path: &std::path::Path,
    header: &CheckpointHeader,
    store: &ParamStore,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, header, store)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(CheckpointHeader, ParamStore)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut r)
}
