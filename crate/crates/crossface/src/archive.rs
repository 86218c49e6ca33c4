//! Portable container for named float arrays plus a JSON metadata blob.
//! Checkpoints and feature-extractor weights both use it.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "NARC" | format u32 | manifest_len u64 | manifest JSON | raw f32 data...
//! ```
//!
//! The manifest lists every array's name, shape, and element count in file
//! order. Array bytes follow back to back in that order, so writing the same
//! arrays in the same order is byte-identical: resume tests depend on that.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NARC";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 4],
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    meta: serde_json::Value,
    arrays: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Archive {
    pub meta: serde_json::Value,
    arrays: Vec<NamedArray>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive { meta, arrays: Vec::new() }
    }

    /// Append an array. Names must be unique within the archive.
    pub fn push(&mut self, name: &str, shape: [usize; 4], data: Vec<f32>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Checkpoint(format!(
                "array {name}: shape {shape:?} does not hold {} elements",
                data.len()
            )));
        }
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(Error::Checkpoint(format!("duplicate array name {name}")));
        }
        self.arrays.push(NamedArray { name: name.to_string(), shape, data });
        Ok(())
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor<f32>) -> Result<()> {
        self.push(name, t.shape(), t.data().to_vec())
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Look up `name` and copy it into `dst`, which must match its shape.
    pub fn read_into(&self, name: &str, dst: &mut Tensor<f32>) -> Result<()> {
        let arr = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("archive is missing array {name}")))?;
        if arr.shape != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "array {name}: stored shape {:?} vs expected {:?}",
                arr.shape,
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(&arr.data);
        Ok(())
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format: FORMAT,
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ManifestEntry {
                    name: a.name.clone(),
                    shape: a.shape,
                    len: a.data.len(),
                })
                .collect(),
        };
        let mjson = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(
            16 + mjson.len() + self.arrays.iter().map(|a| a.data.len() * 4).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT.to_le_bytes());
        out.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&mjson);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Archive> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("archive truncated before magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a named-array archive".into()));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)
            .map_err(|_| Error::Checkpoint("archive truncated before format".into()))?;
        let format = u32::from_le_bytes(u32b);
        if format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "archive format {format} unsupported (expected {FORMAT})"
            )));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)
            .map_err(|_| Error::Checkpoint("archive truncated before manifest".into()))?;
        let mlen = u64::from_le_bytes(u64b) as usize;
        if r.len() < mlen {
            return Err(Error::Checkpoint("archive truncated inside manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&r[..mlen])?;
        r = &r[mlen..];
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for e in &manifest.arrays {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Checkpoint(format!(
                    "array {}: manifest shape/len mismatch",
                    e.name
                )));
            }
            if r.len() < e.len * 4 {
                return Err(Error::Checkpoint(format!(
                    "archive truncated inside array {}",
                    e.name
                )));
            }
            let mut data = Vec::with_capacity(e.len);
            for chunk in r[..e.len * 4].chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            r = &r[e.len * 4..];
            arrays.push(NamedArray { name: e.name.clone(), shape: e.shape, data });
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last array",
                r.len()
            )));
        }
        let mut archive = Archive { meta: manifest.meta, arrays: Vec::new() };
        for a in arrays {
            let (name, shape, data) = (a.name, a.shape, a.data);
            archive.push(&name, shape, data)?;
        }
        Ok(archive)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Archive> {
        Archive::from_bytes(&std::fs::read(path)?)
    }
}
