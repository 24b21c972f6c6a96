//! Checkpoints: one flat little-endian float64 file plus a JSON manifest
//! naming every array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec, Named};
use crate::error::{BenchError, Result};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the weights file.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ModelSpec,
    pub tensors: Vec<TensorEntry>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(dir: &Path, model: &Model) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut body = Vec::new();
    let mut tensors = Vec::new();
    let arrays = model
        .store
        .params
        .iter()
        .map(|n| (n, true))
        .chain(model.store.buffers.iter().map(|n| (n, false)));
    for (Named { name, value }, trainable) in arrays {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: value.shape().to_vec(),
            dtype: "real64".into(),
            offset: body.len(),
            trainable,
        });
        for v in value.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        spec: model.spec().clone(),
        tensors,
    };
    write_atomic(&dir.join(WEIGHTS_FILE), &body)?;
    write_atomic(
        &dir.join(MANIFEST_FILE),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Rebuilds the model from its spec and overwrites every array with the
/// stored values, checking names and shapes.
pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let body = fs::read(&weights_path)?;
    let mut model = Model::new(manifest.spec)?;
    let slots = model
        .store
        .params
        .iter_mut()
        .chain(model.store.buffers.iter_mut());
    let mut count = 0;
    for (slot, entry) in slots.zip(&manifest.tensors) {
        count += 1;
        if slot.name != entry.name
            || slot.value.shape() != entry.shape.as_slice()
            || entry.dtype != "real64"
        {
            return Err(BenchError::Data(format!(
                "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                entry.name,
                entry.shape,
                slot.name,
                slot.value.shape()
            )));
        }
        let n = slot.value.len();
        let end = entry.offset + 8 * n;
        if end > body.len() {
            return Err(BenchError::Corrupt {
                path: weights_path.clone(),
                detail: format!("tensor {} runs past the end of the file", entry.name),
                header_len: 0,
                expected: end,
                actual: body.len(),
            });
        }
        for (v, chunk) in slot
            .value
            .data_mut()
            .iter_mut()
            .zip(body[entry.offset..end].chunks_exact(8))
        {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    let expected = model.store.params.len() + model.store.buffers.len();
    if count != expected || manifest.tensors.len() != expected {
        return Err(BenchError::Data(format!(
            "checkpoint lists {} tensors, model has {expected}",
            manifest.tensors.len()
        )));
    }
    Ok(model)
}
