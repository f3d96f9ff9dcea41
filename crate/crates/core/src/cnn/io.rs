//! `mdl-v1` model files: `<name>.json` manifest (architecture, tensor table,
//! training provenance) and `<name>.bin`, every tensor as little-endian `f32`
//! laid out back to back at the offsets listed in the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, BN_NAMES};
use super::tensor::Tensor;
use super::train::{EpochMetrics, TrainConfig};
use crate::error::{Error, Result};
use crate::format;

pub const MODEL_FORMAT: &str = "mdl-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub dataset_hash: String,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    /// Mean CP length of the training traces, used as the screening default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cp_len: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

pub fn model_paths(base: &Path) -> [PathBuf; 2] {
    [format::with_ext(base, "json"), format::with_ext(base, "bin")]
}

/// Every stored tensor: parameters, then running mean and variance per batch-norm.
fn stored_tensors(model: &Model) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out: Vec<_> = model
        .params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), t.data().to_vec()))
        .collect();
    for (name, r) in BN_NAMES.iter().zip(&model.running) {
        out.push((format!("{name}.bn.running_mean"), vec![r.mean.len()], r.mean.clone()));
        out.push((format!("{name}.bn.running_var"), vec![r.var.len()], r.var.clone()));
    }
    out
}

pub fn save_model(base: &Path, model: &Model, provenance: Option<Provenance>) -> Result<Vec<PathBuf>> {
    let [manifest_path, blob_path] = model_paths(base);
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    for (name, shape, data) in stored_tensors(model) {
        tensors.push(TensorEntry {
            name,
            shape,
            offset: blob.len(),
        });
        blob.extend(data.iter().map(|&v| v as f32));
    }
    format::write_json(
        &manifest_path,
        &ModelManifest {
            format: MODEL_FORMAT.to_owned(),
            config: model.config.clone(),
            tensors,
            provenance,
        },
    )?;
    format::write_f32_le(&blob_path, blob)?;
    Ok(vec![manifest_path, blob_path])
}

pub fn load_model(base: &Path) -> Result<(Model, Option<Provenance>)> {
    let [manifest_path, blob_path] = model_paths(base);
    format::check_format(&manifest_path, MODEL_FORMAT)?;
    let manifest: ModelManifest = format::read_json(&manifest_path)?;
    let blob = format::read_f32_le(&blob_path)?;
    let malformed = |reason: String| Error::Malformed {
        path: manifest_path.clone(),
        reason,
    };
    let mut model = Model::new(manifest.config.clone(), 0)?;
    let expected = stored_tensors(&model);
    if manifest.tensors.len() != expected.len() {
        return Err(malformed(format!(
            "{} tensors listed, architecture has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(expected.len());
    for (entry, (name, shape, _)) in manifest.tensors.iter().zip(&expected) {
        if &entry.name != name {
            return Err(malformed(format!("expected tensor {name}, found {}", entry.name)));
        }
        if &entry.shape != shape {
            return Err(Error::Shape {
                layer: name.clone(),
                expected: shape.clone(),
                actual: entry.shape.clone(),
            });
        }
        let len: usize = shape.iter().product();
        let data = blob
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| malformed(format!("tensor {name} runs past the end of the blob")))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(malformed(format!("tensor {name} has non-finite values")));
        }
        values.push(data.iter().map(|&v| v as f64).collect::<Vec<f64>>());
    }
    let n_params = model.params.named().len();
    let mut values = values.into_iter();
    for ((name, t), data) in model.params.named_mut().into_iter().zip(values.by_ref()) {
        *t = Tensor::new(t.shape().to_vec(), data).map_err(|_| malformed(format!("bad tensor {name}")))?;
    }
    debug_assert_eq!(expected.len() - n_params, 2 * model.running.len());
    for r in &mut model.running {
        r.mean = values.next().expect("counted above");
        r.var = values.next().expect("counted above");
        if r.var.iter().any(|&v| v <= 0.0) {
            return Err(malformed("running variance must be positive".into()));
        }
    }
    Ok((model, manifest.provenance))
}
