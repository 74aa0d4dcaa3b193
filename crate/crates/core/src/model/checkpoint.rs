//! Binary checkpoint: magic, version, canonical config text, then named
//! parameter blobs. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AmtsfmModel, ModelConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMTSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME: u32 = 4096;
const MAX_NDIM: u32 = 16;

pub fn write_checkpoint<W: Write>(model: &AmtsfmModel, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let text = model.config().to_canonical();
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    let params = model.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &s in t.shape() {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bytes<R: Read, const K: usize>(r: &mut R) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn u32_le<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(bytes(r)?))
}

fn u64_le<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(bytes(r)?))
}

fn string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("non-UTF-8 text".into()))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<AmtsfmModel> {
    let magic: [u8; 8] = bytes(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32_le(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let text_len = u64_le(&mut r)? as usize;
    let config = ModelConfig::from_canonical(&string(&mut r, text_len)?)?;
    let count = u64_le(&mut r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = u32_le(&mut r)?;
        if name_len > MAX_NAME {
            return Err(Error::Checkpoint(format!("parameter name of {name_len} bytes")));
        }
        let name = string(&mut r, name_len as usize)?;
        let ndim = u32_le(&mut r)?;
        if ndim > MAX_NDIM {
            return Err(Error::Checkpoint(format!("`{name}` has {ndim} dimensions")));
        }
        let shape = (0..ndim)
            .map(|_| u64_le(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &s| a.checked_mul(s));
        let numel = numel.ok_or_else(|| Error::Checkpoint(format!("`{name}` shape overflows")))?;
        let data = (0..numel)
            .map(|_| Ok(f64::from_le_bytes(bytes(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        if params.contains(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        params.insert(name, Tensor::new(&shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    AmtsfmModel::from_params(config, params).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(model: &AmtsfmModel, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AmtsfmModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
