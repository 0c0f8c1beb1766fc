//! `PXN1` checkpoint files.
//!
//! ```text
//! "PXN1"  u32 version
//! str config (TOML)  str stats hash  u32 resolution  u32 epoch
//! u32 blob count, then per blob: str name, u32 length, f32 values
//! ```
//!
//! Integers and floats are little-endian; `str` is a u32 byte length and
//! UTF-8 bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NetError, Result};
use crate::train::{Model, TrainConfig};

const MAGIC: &[u8; 4] = b"PXN1";
const VERSION: u32 = 1;
const MAX_STRING: usize = 1 << 20;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| NetError::Checkpoint(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > MAX_STRING {
        return Err(NetError::Checkpoint(format!("string of {n} bytes")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|e| NetError::Checkpoint(format!("truncated: {e}")))?;
    String::from_utf8(b).map_err(|_| NetError::Checkpoint("string is not UTF-8".into()))
}

/// Every parameter and buffer of the model by name.
fn blobs(model: &mut Model) -> Vec<(String, &mut Vec<f32>)> {
    let mut out = model.generator.state();
    out.extend(model.discriminator.state());
    out
}

pub fn write_checkpoint(model: &mut Model, epoch: usize, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_str(w, &model.config.to_toml())?;
    put_str(w, &model.stats_hash)?;
    put_u32(w, model.resolution as u32)?;
    put_u32(w, epoch as u32)?;
    let blobs = blobs(model);
    put_u32(w, blobs.len() as u32)?;
    for (name, values) in blobs {
        put_str(w, &name)?;
        put_u32(w, values.len() as u32)?;
        let mut bytes = Vec::with_capacity(4 * values.len());
        for v in values.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

/// Model and the epoch it was saved at.
pub fn read_checkpoint(r: &mut impl Read) -> Result<(Model, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| NetError::Checkpoint(format!("truncated: {e}")))?;
    if &magic != MAGIC {
        return Err(NetError::Checkpoint("missing PXN1 magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("version {version} (expected {VERSION})")));
    }
    let config = TrainConfig::from_toml(&get_str(r)?)?;
    let stats_hash = get_str(r)?;
    let resolution = get_u32(r)? as usize;
    let epoch = get_u32(r)? as usize;
    let mut model = Model::new(&config, resolution, &stats_hash)?;
    let count = get_u32(r)? as usize;
    let mut stored = BTreeMap::new();
    for _ in 0..count {
        let name = get_str(r)?;
        let n = get_u32(r)? as usize;
        let mut bytes = vec![0u8; 4 * n];
        r.read_exact(&mut bytes).map_err(|e| NetError::Checkpoint(format!("blob {name} truncated: {e}")))?;
        let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if stored.insert(name.clone(), values).is_some() {
            return Err(NetError::Checkpoint(format!("blob {name} appears twice")));
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    if !rest.is_empty() {
        return Err(NetError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    for (name, slot) in blobs(&mut model) {
        let values = stored
            .remove(&name)
            .ok_or_else(|| NetError::Checkpoint(format!("blob {name} missing")))?;
        if values.len() != slot.len() {
            return Err(NetError::Checkpoint(format!("blob {name} has {} values, expected {}", values.len(), slot.len())));
        }
        *slot = values;
    }
    if let Some(name) = stored.keys().next() {
        return Err(NetError::Checkpoint(format!("unexpected blob {name}")));
    }
    Ok((model, epoch))
}

/// Writes to a temporary file next to `path` and renames it into place.
pub fn save_checkpoint(model: &mut Model, epoch: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(|e| NetError::io(&tmp, e))?);
    write_checkpoint(model, epoch, &mut f)
        .and_then(|_| f.flush())
        .map_err(|e| NetError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| NetError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, usize)> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| NetError::io(path, e))?;
    read_checkpoint(&mut std::io::BufReader::new(f))
}
