//! Parameter checkpoints: a JSON manifest mapping tensor names to PVT1 files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::Graph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{read_pvt1_file, write_pvt1_file, Tensor};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Names under this prefix hold optimizer state rather than parameters.
pub const OPTIMIZER_PREFIX: &str = "optim/";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    tensors: BTreeMap<String, String>,
    #[serde(default)]
    meta: serde_json::Value,
}

const FORMAT: &str = "pvgan-checkpoint-1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint<T> {
    pub tensors: BTreeMap<String, Tensor<T>>,
    pub meta: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
            meta: serde_json::Value::Null,
        }
    }

    /// Captures every trainable parameter of `graph` by name.
    pub fn from_graph(graph: &Graph<T>) -> Self {
        let mut c = Self::new();
        for (name, id) in graph.params() {
            c.tensors
                .insert(name, graph.value(id).expect("params are bound").clone());
        }
        c
    }

    /// Writes parameter values back into `graph`; every graph parameter must
    /// be present with matching dims.
    pub fn restore_into(&self, graph: &mut Graph<T>) -> Result<()> {
        for (name, id) in graph.params() {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name:?}")))?;
            graph.set_value(id, t.clone())?;
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        for (i, (name, t)) in self.tensors.iter().enumerate() {
            let file = format!("t{i:05}.pvt1");
            write_pvt1_file(dir.join(&file), t)?;
            files.insert(name.clone(), file);
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            tensors: files,
            meta: self.meta.clone(),
        };
        fs::write(
            dir.join(MANIFEST_NAME),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!(
                "unknown checkpoint format {:?}",
                manifest.format
            )));
        }
        let mut tensors = BTreeMap::new();
        for (name, file) in manifest.tensors {
            if file.contains('/') || file.contains("..") {
                return Err(Error::Format(format!("invalid tensor file name {file:?}")));
            }
            tensors.insert(name, read_pvt1_file(dir.join(file))?);
        }
        Ok(Self {
            tensors,
            meta: manifest.meta,
        })
    }
}
