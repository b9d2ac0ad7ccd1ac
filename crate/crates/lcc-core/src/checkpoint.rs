//! Named parameter sets and their on-disk container.
//!
//! A checkpoint is a single self-describing JSON file: a format-version
//! header, caller-defined metadata, and one `(name, shape, row-major f64
//! values)` record per parameter, in registration order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint does not match the model:\n{}", .0.join("\n"))]
    Mismatch(Vec<String>),
    #[error("duplicate parameter name '{0}'")]
    DuplicateName(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format_version: u32,
    pub meta: M,
    pub tensors: Vec<TensorRecord>,
}

/// Ordered collection of named, learnable tensors. Order is fixed at
/// registration time and determines checkpoint layout and optimizer-state
/// alignment.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Whether weight decay applies to this parameter.
    pub decay: bool,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        decay: bool,
    ) -> Result<(), CheckpointError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CheckpointError::DuplicateName(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor: tensor.with_requires_grad(true),
            decay,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry {
        &mut self.entries[idx]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.entries
            .iter()
            .map(|e| TensorRecord {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                values: e.tensor.values().to_vec(),
            })
            .collect()
    }

    /// Overwrite every parameter from `records`. Collects *all* problems
    /// (missing names, unknown names, shape mismatches) before failing.
    pub fn load_records(&mut self, records: &[TensorRecord]) -> Result<(), CheckpointError> {
        let mut problems = Vec::new();
        let mut seen = vec![false; self.entries.len()];
        let mut staged: Vec<(usize, &TensorRecord)> = Vec::with_capacity(records.len());
        for rec in records {
            match self.index.get(&rec.name) {
                None => problems.push(format!("unknown parameter '{}'", rec.name)),
                Some(&i) => {
                    seen[i] = true;
                    let want = self.entries[i].tensor.shape();
                    if want != rec.shape.as_slice() {
                        problems.push(format!(
                            "parameter '{}': checkpoint shape {:?} vs model shape {:?}",
                            rec.name, rec.shape, want
                        ));
                    } else if rec.values.len() != self.entries[i].tensor.numel() {
                        problems.push(format!(
                            "parameter '{}': {} values for shape {:?}",
                            rec.name,
                            rec.values.len(),
                            rec.shape
                        ));
                    } else {
                        staged.push((i, rec));
                    }
                }
            }
        }
        for (i, hit) in seen.iter().enumerate() {
            if !hit {
                problems.push(format!(
                    "parameter '{}' missing from checkpoint",
                    self.entries[i].name
                ));
            }
        }
        if !problems.is_empty() {
            return Err(CheckpointError::Mismatch(problems));
        }
        for (i, rec) in staged {
            self.entries[i].tensor = Tensor::new(rec.shape.clone(), rec.values.clone())
                .expect("record validated above")
                .with_requires_grad(true);
        }
        Ok(())
    }
}

pub fn save<M: Serialize>(path: &Path, meta: &M, params: &ParamSet) -> Result<(), CheckpointError> {
    let ckpt = Checkpoint {
        format_version: FORMAT_VERSION,
        meta,
        tensors: params.to_records(),
    };
    let body = serde_json::to_string(&ckpt).map_err(|e| CheckpointError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    fs::write(path, body).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load<M: DeserializeOwned>(path: &Path) -> Result<Checkpoint<M>, CheckpointError> {
    let body = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ckpt: Checkpoint<M> = serde_json::from_str(&body).map_err(|e| CheckpointError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if ckpt.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: ckpt.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_fn(&[2, 3], |i| i as f64), true)
            .unwrap();
        p.insert("b", Tensor::zeros(&[3]), false).unwrap();
        p
    }

    #[test]
    fn roundtrip_preserves_values_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let set = small_set();
        save(&path, &serde_json::json!({"kind": "test"}), &set).unwrap();
        let loaded: Checkpoint<serde_json::Value> = load(&path).unwrap();
        assert_eq!(loaded.tensors.len(), 2);
        assert_eq!(loaded.tensors[0].name, "w");
        let mut fresh = small_set();
        fresh.load_records(&loaded.tensors).unwrap();
        assert_eq!(
            fresh.get("w").unwrap().values(),
            set.get("w").unwrap().values()
        );
    }

    #[test]
    fn mismatched_shapes_are_all_reported() {
        let mut set = small_set();
        let records = vec![
            TensorRecord {
                name: "w".into(),
                shape: vec![3, 2],
                values: vec![0.0; 6],
            },
            TensorRecord {
                name: "extra".into(),
                shape: vec![1],
                values: vec![0.0],
            },
        ];
        let err = set.load_records(&records).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'w'"), "{msg}");
        assert!(msg.contains("'extra'"), "{msg}");
        assert!(msg.contains("'b'"), "{msg}");
    }
}
