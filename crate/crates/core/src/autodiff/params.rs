//! Named parameter storage with a stable flat serialization order.
//!
//! Checkpoint layout: `manifest.json` describing names, shapes and byte
//! offsets, next to `params.bin` holding little-endian f32 values in manifest
//! order. When optimizer state is saved, the Adam moment vectors follow the
//! parameters in the same order (m for every parameter, then v).

use super::tensor::Tensor;
use super::AdError;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// All learnable tensors, ordered by insertion. Insertion order is the
/// serialization order and never changes after creation.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    /// Adam first/second moments, allocated on first optimizer step.
    pub(crate) moments: Option<(Vec<Tensor>, Vec<Tensor>)>,
    /// Optimizer step counter (t in the bias correction).
    pub(crate) step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            moments: None,
            step: 0,
        }
    }

    /// Registers a parameter; returns its stable index.
    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<usize, AdError> {
        if self.names.iter().any(|n| n == name) {
            return Err(AdError::Param {
                detail: format!("duplicate parameter name {name:?}"),
            });
        }
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    /// Total learnable scalar count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn shapes2(&self) -> Result<Vec<(usize, usize)>, AdError> {
        self.tensors.iter().map(|t| t.dims2()).collect()
    }

    pub fn optimizer_step(&self) -> u64 {
        self.step
    }

    /// Writes `manifest.json` + `params.bin` into `dir` (created if absent).
    pub fn save(&self, dir: &Path, save_optimizer: bool) -> Result<(), AdError> {
        let io = |e: std::io::Error| AdError::Io {
            detail: format!("{}: {e}", dir.display()),
        };
        fs::create_dir_all(dir).map_err(io)?;

        let mut bin: Vec<u8> = Vec::new();
        let mut entries = Vec::with_capacity(self.names.len());
        for (name, t) in self.iter() {
            entries.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: bin.len() as u64,
            });
            for v in t.data() {
                bin.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let with_moments = save_optimizer && self.moments.is_some();
        if with_moments {
            let (m, v) = self.moments.as_ref().unwrap();
            for t in m.iter().chain(v.iter()) {
                for x in t.data() {
                    bin.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
        }
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            params: entries,
            optimizer_state: with_moments,
            optimizer_step: self.step,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| AdError::Io {
            detail: format!("manifest encode: {e}"),
        })?;
        fs::write(dir.join("manifest.json"), json).map_err(io)?;
        fs::write(dir.join("params.bin"), bin).map_err(io)?;
        Ok(())
    }

    /// Loads a checkpoint saved by [`ParamStore::save`].
    pub fn load(dir: &Path) -> Result<Self, AdError> {
        let io = |e: std::io::Error| AdError::Io {
            detail: format!("{}: {e}", dir.display()),
        };
        let json = fs::read_to_string(dir.join("manifest.json")).map_err(io)?;
        let manifest: CheckpointManifest = serde_json::from_str(&json).map_err(|e| AdError::Io {
            detail: format!("manifest decode: {e}"),
        })?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(AdError::Io {
                detail: format!(
                    "checkpoint version {} unsupported (expected {})",
                    manifest.version, CHECKPOINT_VERSION
                ),
            });
        }
        let bin = fs::read(dir.join("params.bin")).map_err(io)?;

        let mut store = ParamStore::new();
        for e in &manifest.params {
            let n: usize = e.shape.iter().product();
            let t = read_f32_block(&bin, e.offset as usize, n, &e.name)?;
            store.add(&e.name, Tensor::new(e.shape.clone(), t)?)?;
        }
        store.step = manifest.optimizer_step;
        if manifest.optimizer_state {
            let param_bytes: usize = store.tensors.iter().map(|t| t.len() * 4).sum();
            let mut off = param_bytes;
            let read_set = |off: &mut usize| -> Result<Vec<Tensor>, AdError> {
                let mut set = Vec::with_capacity(store.tensors.len());
                for t in &store.tensors {
                    let d = read_f32_block(&bin, *off, t.len(), "optimizer state")?;
                    *off += t.len() * 4;
                    set.push(Tensor::new(t.shape().to_vec(), d)?);
                }
                Ok(set)
            };
            let m = read_set(&mut off)?;
            let v = read_set(&mut off)?;
            store.moments = Some((m, v));
        }
        Ok(store)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

fn read_f32_block(bin: &[u8], offset: usize, n: usize, what: &str) -> Result<Vec<f64>, AdError> {
    let end = offset + n * 4;
    if end > bin.len() {
        return Err(AdError::Io {
            detail: format!("params.bin truncated reading {what} ({end} > {})", bin.len()),
        });
    }
    Ok(bin[offset..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    params: Vec<ParamEntry>,
    optimizer_state: bool,
    #[serde(default)]
    optimizer_step: u64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_order_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParamStore::new();
        s.add("b", Tensor::row(&[1.0, 2.0])).unwrap();
        s.add("a", Tensor::matrix(2, 2, vec![0.25, -0.5, 3.0, 4.0]).unwrap())
            .unwrap();
        s.save(dir.path(), false).unwrap();
        let r = ParamStore::load(dir.path()).unwrap();
        assert_eq!(r.name(0), "b");
        assert_eq!(r.name(1), "a");
        assert_eq!(r.tensor(1).data(), s.tensor(1).data());
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(1, 1)).unwrap();
        assert!(s.add("w", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn save_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let mut s = ParamStore::new();
        s.add("w", Tensor::row(&[0.1, 0.2, 0.3])).unwrap();
        s.save(d1.path(), false).unwrap();
        s.save(d2.path(), false).unwrap();
        let b1 = std::fs::read(d1.path().join("params.bin")).unwrap();
        let b2 = std::fs::read(d2.path().join("params.bin")).unwrap();
        assert_eq!(b1, b2);
        let m1 = std::fs::read(d1.path().join("manifest.json")).unwrap();
        let m2 = std::fs::read(d2.path().join("manifest.json")).unwrap();
        assert_eq!(m1, m2);
    }
}
