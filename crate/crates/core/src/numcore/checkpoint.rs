//! `CGW1` parameter checkpoints: little-endian, float32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CGW1";

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_checkpoint_to(params: &ParamStore, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_checkpoint(params: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_checkpoint_to(params, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads `(name, tensor)` pairs in file order.
pub fn read_checkpoint_from(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let bad = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(bad)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            what: "checkpoint",
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(r).map_err(bad)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(r).map_err(bad)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(bad)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name not UTF-8".into()))?;
        let rank = read_u32(r).map_err(bad)? as usize;
        let dims = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(bad)?;
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; 4 * n];
        r.read_exact(&mut bytes).map_err(bad)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(bad)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// Loads a checkpoint into `params`, whose names and shapes (from the model
/// config) must match the file exactly.
pub fn load_checkpoint(params: &mut ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let tensors = read_checkpoint_from(&mut r)?;
    if tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, config expects {}",
            tensors.len(),
            params.len()
        )));
    }
    for (name, t) in tensors {
        let id = params
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        if params.get(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {:?} in file, {:?} expected",
                t.shape(),
                params.get(id).shape()
            )));
        }
        *params.get_mut(id) = t;
    }
    Ok(())
}
