//! Named-parameter checkpoint files.
//!
//! One JSON document per checkpoint: a format-version header plus a sorted
//! list of named sections, each holding a shape and row-major f64 data.
//! serde_json round-trips f64 exactly, so save/load is lossless.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::{NnError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FileRepr {
    version: u32,
    params: Vec<Entry>,
}

/// In-memory checkpoint: named parameter sections in sorted order.
#[derive(Debug, Default, Clone)]
pub struct Checkpoint {
    sections: BTreeMap<String, DenseArray>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: DenseArray) {
        self.sections.insert(name.into(), array);
    }

    /// Adds a batch of (name, array) pairs, e.g. an Mlp's named params.
    pub fn insert_all<'a, I>(&mut self, names: &[String], arrays: I)
    where
        I: IntoIterator<Item = &'a DenseArray>,
    {
        for (n, a) in names.iter().zip(arrays) {
            self.insert(n.clone(), a.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray> {
        self.sections.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = FileRepr {
            version: FORMAT_VERSION,
            params: self
                .sections
                .iter()
                .map(|(name, a)| Entry {
                    name: name.clone(),
                    shape: a.shape().to_vec(),
                    data: a.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&repr).map_err(|e| NnError::CheckpointIo(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: FileRepr =
            serde_json::from_str(text).map_err(|e| NnError::CheckpointIo(e.to_string()))?;
        if repr.version != FORMAT_VERSION {
            return Err(NnError::CheckpointVersion {
                found: repr.version,
                expected: FORMAT_VERSION,
            });
        }
        let mut out = Self::new();
        for e in repr.params {
            out.insert(e.name, DenseArray::new(e.shape, e.data)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| NnError::CheckpointIo(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NnError::CheckpointIo(e.to_string()))?;
        Self::from_json(&text)
    }
}
