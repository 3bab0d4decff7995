//! Dataset manifest: JSON-lines, one line per (subject, instance) pair,
//! preceded by a single header line carrying the schema version.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{InstanceKind, Label};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub subject_id: String,
    pub label: Label,
    pub instance: InstanceKind,
    pub path: PathBuf,
    pub duration_sec: f64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub schema_version: u32,
    pub records: Vec<ManifestRecord>,
}

/// A subject group reconstructed from manifest rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub label: Label,
    pub instances: BTreeMap<InstanceKind, ManifestRecord>,
}

impl Manifest {
    /// Build a manifest, sorting records and validating invariants:
    /// no duplicate (subject, instance) pair, one label per subject.
    pub fn new(mut records: Vec<ManifestRecord>) -> Result<Self> {
        records.sort_by(|a, b| (&a.subject_id, a.instance).cmp(&(&b.subject_id, b.instance)));
        for pair in records.windows(2) {
            if pair[0].subject_id == pair[1].subject_id && pair[0].instance == pair[1].instance {
                return Err(Error::Validation(format!(
                    "duplicate subject_id {} instance {}",
                    pair[0].subject_id, pair[0].instance
                )));
            }
        }
        let mut label_of: BTreeMap<&str, Label> = BTreeMap::new();
        for r in &records {
            match label_of.get(r.subject_id.as_str()) {
                Some(&l) if l != r.label => {
                    return Err(Error::Validation(format!(
                        "subject {} has conflicting labels",
                        r.subject_id
                    )));
                }
                _ => {
                    label_of.insert(&r.subject_id, r.label);
                }
            }
        }
        Ok(Manifest { schema_version: SCHEMA_VERSION, records })
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records grouped per subject, sorted by subject id.
    pub fn subjects(&self) -> Vec<SubjectEntry> {
        let mut out: Vec<SubjectEntry> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some(e) if e.subject_id == r.subject_id => {
                    e.instances.insert(r.instance, r.clone());
                }
                _ => {
                    let mut instances = BTreeMap::new();
                    instances.insert(r.instance, r.clone());
                    out.push(SubjectEntry {
                        subject_id: r.subject_id.clone(),
                        label: r.label,
                        instances,
                    });
                }
            }
        }
        out
    }

    pub fn subject_count(&self) -> usize {
        self.subjects().len()
    }

    /// Check that every subject carries exactly the required instances.
    pub fn validate_complete(&self, required: &[InstanceKind]) -> Result<()> {
        for s in self.subjects() {
            if s.instances.len() != required.len()
                || required.iter().any(|k| !s.instances.contains_key(k))
            {
                return Err(Error::Validation(format!(
                    "subject {} has {} instances, expected {}",
                    s.subject_id,
                    s.instances.len(),
                    required.len()
                )));
            }
        }
        Ok(())
    }
}

/// Serialize to the JSON-lines format. Errors on an empty record list.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    if manifest.records.is_empty() {
        return Err(Error::Validation("refusing to write an empty manifest".into()));
    }
    write_manifest_allow_empty(manifest, path)
}

/// Same as [`write_manifest`] but allows zero records (used by `prepare`
/// on an empty input tree, which is a warning rather than an error).
pub fn write_manifest_allow_empty(manifest: &Manifest, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let header = Header { schema_version: manifest.schema_version };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Schema(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for r in &manifest.records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Schema(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Schema("manifest file is empty".into())),
    };
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| Error::Schema(format!("bad manifest header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported manifest schema version {}",
            header.schema_version
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("manifest line {}: {e}", i + 2)))?;
        records.push(r);
    }
    let mut m = Manifest::new(records)?;
    m.schema_version = header.schema_version;
    Ok(m)
}
