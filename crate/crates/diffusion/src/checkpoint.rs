//! Single-file weight container: a JSON header followed by a table of
//! named little-endian arrays.
//!
//! Layout: magic `SVBRDFCK`, format version (`u32`), header length (`u32`),
//! header JSON, tensor count (`u32`), then per tensor the name length
//! (`u32`), UTF-8 name, rank (`u32`), dimensions (`u64` each) and values in
//! the header's dtype.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use svbrdf_core::Real;

use crate::error::{io_err, Error, Result};
use crate::nn::ParamStore;
use crate::unet::{Denoiser, NetConfig};

pub const MAGIC: &[u8; 8] = b"SVBRDFCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub net: NetConfig,
    /// Free-form run metadata (step, seeds, config hash).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode<T: Real>(net: &NetConfig, meta: serde_json::Value, tensors: &ParamStore<T>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        net: net.clone(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(tensors.scalar_count() * T::BYTES + json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, values) in tensors.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in values {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_values<S: Real, T: Real>(raw: &[u8]) -> Vec<T> {
    raw.chunks_exact(S::BYTES).map(|c| T::lit(S::read_le(c).as_f64())).collect()
}

pub fn decode<T: Real>(bytes: &[u8]) -> std::result::Result<(CheckpointHeader, ParamStore<T>), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?).map_err(|e| format!("bad header: {e}"))?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(format!("unknown dtype {other}")),
    };
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| "tensor name is not UTF-8")?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(width).ok_or("tensor too large")?)?;
        let values = if width == 4 { read_values::<f32, T>(raw) } else { read_values::<f64, T>(raw) };
        if store.id(&name).is_some() {
            return Err(format!("duplicate tensor {name}"));
        }
        store.insert(name, &shape, values);
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after tensor table".into());
    }
    Ok((header, store))
}

pub fn write<T: Real>(path: &Path, net: &NetConfig, meta: serde_json::Value, tensors: &ParamStore<T>) -> Result<()> {
    let bytes = encode(net, meta, tensors)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read<T: Real>(path: &Path) -> Result<(CheckpointHeader, ParamStore<T>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save_denoiser<T: Real>(path: &Path, model: &Denoiser<T>, meta: serde_json::Value) -> Result<()> {
    write(path, model.config(), meta, model.params())
}

pub fn load_denoiser<T: Real>(path: &Path) -> Result<(Denoiser<T>, serde_json::Value)> {
    let (header, params) = read(path)?;
    let model = Denoiser::from_parts(header.net, params).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok((model, header.meta))
}
