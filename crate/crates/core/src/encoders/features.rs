//! Precomputed-feature files for external backbone adapters.
//!
//! Binary layout, little-endian:
//!   bytes 0..4   magic "AFT1"
//!   bytes 4..8   t (u32) number of time steps
//!   bytes 8..12  d (u32) feature dimension
//!   then t * d f32 values, row-major (one row per time step).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::audio::InstanceKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"AFT1";

pub fn write_features<S: Scalar>(path: &Path, features: &Array2<S>) -> Result<()> {
    let (t, d) = features.dim();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_all(&(t as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&(d as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    for v in features.iter() {
        w.write_all(&(v.to_f() as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_features<S: Scalar>(path: &Path) -> Result<Array2<S>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[0..4] != MAGIC {
        return Err(Error::Schema(format!("{}: bad feature-file magic", path.display())));
    }
    let t = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if t == 0 || d == 0 {
        return Err(Error::Schema(format!("{}: empty feature matrix", path.display())));
    }
    let mut payload = vec![0u8; t * d * 4];
    r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let values: Vec<S> = payload
        .chunks_exact(4)
        .map(|c| S::from_f(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Array2::from_shape_vec((t, d), values)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Path of the feature file for `(subject, instance)` under a feature root:
/// `<root>/<subject_id>/<instance-stem>.aft`.
pub fn feature_path(root: &Path, subject_id: &str, instance: InstanceKind) -> std::path::PathBuf {
    root.join(subject_id).join(format!("{}.aft", instance.file_stem()))
}
