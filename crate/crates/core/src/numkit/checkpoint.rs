//! Flat tensor container.
//!
//! Layout: the 8 magic bytes `GRCKPT01`, a little-endian `u64` header
//! length, a UTF-8 JSON header, then the concatenated little-endian `f64`
//! payload. The header lists every tensor's name, shape and byte offset
//! (relative to the start of the payload) plus a free-form `meta` object.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GRCKPT01";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

pub fn write_tensors<W: Write>(
    mut w: W,
    tensors: &[(String, &Tensor)],
    meta: &serde_json::Value,
) -> Result<()> {
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.len() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        meta: meta.clone(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let mut out = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * n;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor {} runs past end of payload", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok((out, header.meta))
}

pub fn save(path: &Path, tensors: &[(String, &Tensor)], meta: &serde_json::Value) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_tensors(&mut w, tensors, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let file = std::fs::File::open(path)?;
    read_tensors(std::io::BufReader::new(file))
}
