//! Single-file model checkpoints.
//!
//! Layout, little-endian:
//!   bytes 0..4    magic "ACKP"
//!   bytes 4..8    format version (u32) = 1
//!   bytes 8..16   header length L (u64)
//!   bytes 16..16+L  JSON header: { "meta": <config echo etc.>,
//!                   "tensors": [ { "name", "shape" }, ... ] }
//!   then each tensor's f32 values, row-major, in header order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Net;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"ACKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Serialize all named parameters (as f32) plus a JSON meta blob.
pub fn save_checkpoint<S: Scalar, N: Net<S> + ?Sized>(
    path: &Path,
    meta: serde_json::Value,
    net: &mut N,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    net.visit_params("", &mut |name, p| {
        entries.push(TensorEntry { name: name.to_string(), shape: p.value.shape().to_vec() });
        for v in p.value.iter() {
            payload.extend_from_slice(&(v.to_f() as f32).to_le_bytes());
        }
    });
    let header = Header { meta, tensors: entries };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    w.write_all(&payload).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<Header> {
    let mut fixed = [0u8; 16];
    r.read_exact(&mut fixed).map_err(|e| Error::io(path, e))?;
    if &fixed[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(fixed[8..16].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Read only the meta blob.
pub fn load_checkpoint_meta(path: &Path) -> Result<serde_json::Value> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    Ok(read_header(&mut r, path)?.meta)
}

/// Load tensors into a model with matching parameter names and shapes;
/// returns the meta blob.
pub fn load_checkpoint<S: Scalar, N: Net<S> + ?Sized>(
    path: &Path,
    net: &mut N,
) -> Result<serde_json::Value> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let header = read_header(&mut r, path)?;

    let mut tensors: std::collections::HashMap<String, ArrayD<S>> =
        std::collections::HashMap::new();
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
        let values: Vec<S> = bytes
            .chunks_exact(4)
            .map(|c| S::from_f(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let arr = ArrayD::from_shape_vec(entry.shape.clone(), values)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
        tensors.insert(entry.name.clone(), arr);
    }

    crate::nn::load_params(net, &tensors)?;
    Ok(header.meta)
}
