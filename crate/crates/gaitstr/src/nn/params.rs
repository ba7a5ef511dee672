//! Named parameter storage, initialization and the checkpoint container.
//!
//! Checkpoint layout (`.gck`), little-endian:
//!
//! ```text
//! magic   4 bytes  "GCK1"
//! jlen    u64      manifest length
//! json    jlen bytes: { "meta": ..., "tensors": [{ "name", "shape" }, ...] }
//! data    f64 per tensor, manifest order, row-major
//! ```
//!
//! Loading validates every tensor shape against the expectation supplied by
//! the caller, so a checkpoint never silently reinterprets a differently
//! configured model.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Arr, Tape, Var};
use crate::error::{GaitError, Result};

/// Handle to one named tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arr>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Arr) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Arr {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Arr {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Restore values from `(name, tensor)` pairs, validating names and
    /// shapes against this store's layout.
    pub fn load_named(&mut self, tensors: Vec<(String, Arr)>) -> Result<()> {
        if tensors.len() != self.values.len() {
            return Err(GaitError::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.values.len()
            )));
        }
        let mut by_name: HashMap<String, Arr> = tensors.into_iter().collect();
        for (name, slot) in self.names.iter().zip(self.values.iter_mut()) {
            let t = by_name.remove(name).ok_or_else(|| {
                GaitError::Format(format!("checkpoint missing tensor '{name}'"))
            })?;
            if t.shape() != slot.shape() {
                return Err(GaitError::Format(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Arr)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .collect()
    }
}

/// Per-evaluation bridge from a [`ParamStore`] to tape leaves.
///
/// Each parameter becomes one leaf per tape, created on first use, so a
/// shared parameter used twice in a forward pass accumulates both gradient
/// contributions on the same leaf.
pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            param_vars: vec![None; params.len()],
        }
    }

    /// Tape leaf for a parameter (one per session).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.params.get(id).clone());
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Tape leaf for an input tensor.
    pub fn input(&mut self, value: Arr) -> Var {
        self.tape.leaf(value)
    }

    /// Parameter gradients present in a backward result, by id.
    pub fn param_grads(&self, grads: &mut super::Grads) -> Vec<(ParamId, Arr)> {
        let mut out = Vec::new();
        for (i, v) in self.param_vars.iter().enumerate() {
            if let Some(var) = v {
                if let Some(g) = grads.take(*var) {
                    out.push((ParamId(i), g));
                }
            }
        }
        out
    }
}

/// Uniform He-style initialization with gain for rectifier stacks.
pub fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Arr {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Arr::from_shape_vec(IxDyn(shape), data).unwrap()
}

pub fn zeros_init(shape: &[usize]) -> Arr {
    Arr::zeros(IxDyn(shape))
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    meta: serde_json::Value,
    tensors: Vec<TensorMeta>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GCK1";

/// Write named tensors plus an arbitrary JSON meta blob.
pub fn write_checkpoint(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &[(String, Arr)],
) -> Result<()> {
    let manifest = CheckpointManifest {
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in tensors {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back as `(meta, named tensors)`.
pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<(String, Arr)>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(GaitError::Format(format!(
            "{}: bad checkpoint magic",
            path.display()
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let jlen = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; jlen];
    r.read_exact(&mut json)?;
    let manifest: CheckpointManifest = serde_json::from_slice(&json)?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut buf = [0u8; 8];
    for tm in manifest.tensors {
        let n: usize = tm.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push((
            tm.name,
            Arr::from_shape_vec(IxDyn(&tm.shape), data)
                .map_err(|e| GaitError::Format(e.to_string()))?,
        ));
    }
    Ok((manifest.meta, tensors))
}
