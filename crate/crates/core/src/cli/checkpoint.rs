//! Checkpoint directories: `manifest.json` plus one tensor file per weight.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};
use crate::tensor::{io, Real};
use crate::train::{History, Precision};

const MANIFEST: &str = "manifest.json";
const WEIGHTS: &str = "weights";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub spec: ModelSpec,
    pub precision: Precision,
    pub history: History,
    pub stats: NormStats,
    pub seed: u64,
    pub dataset_hash: String,
    pub weights: Vec<WeightEntry>,
}

/// A trained model in the precision it was trained in.
pub enum TrainedModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

fn weight_file(name: &str) -> String {
    format!("{WEIGHTS}/{name}.stn")
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Saves `model` under `dir`; the `weights` list of `manifest` is filled in here.
pub fn save_checkpoint<T: Real>(
    dir: &Path,
    model: &Model<T>,
    mut manifest: CheckpointManifest,
) -> Result<()> {
    fs::create_dir_all(dir.join(WEIGHTS))?;
    manifest.weights.clear();
    for (name, t) in model.parameter_names().into_iter().zip(model.parameters()) {
        io::save(dir.join(weight_file(&name)), t)?;
        manifest.weights.push(WeightEntry {
            name,
            shape: t.shape().to_vec(),
        });
    }
    write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("checkpoint {}: {e}", path.display()),
        ))
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn load_typed<T: Real>(dir: &Path, manifest: &CheckpointManifest) -> Result<Model<T>> {
    let mut model = Model::<T>::zeros(manifest.spec.clone())?;
    let names = model.parameter_names();
    if names.len() != manifest.weights.len()
        || names
            .iter()
            .zip(&manifest.weights)
            .any(|(n, w)| *n != w.name)
    {
        return Err(Error::Data(
            "checkpoint weight list does not match its model spec".into(),
        ));
    }
    for (p, name) in model.parameters_mut().into_iter().zip(&names) {
        let t = io::load::<T>(dir.join(weight_file(name)))?;
        if t.shape() != p.shape() {
            return Err(Error::Data(format!(
                "weight `{name}` has shape {:?}, the model expects {:?}",
                t.shape(),
                p.shape()
            )));
        }
        *p = t;
    }
    Ok(model)
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, TrainedModel)> {
    let manifest = read_manifest(dir)?;
    let model = match manifest.precision {
        Precision::F32 => TrainedModel::F32(load_typed(dir, &manifest)?),
        Precision::F64 => TrainedModel::F64(load_typed(dir, &manifest)?),
    };
    Ok((manifest, model))
}

/// SHA-256 over the manifest and every weight file, in manifest order.
pub fn artifact_hash(dir: &Path) -> Result<String> {
    let manifest = read_manifest(dir)?;
    let mut h = Sha256::new();
    h.update(fs::read(dir.join(MANIFEST))?);
    for w in &manifest.weights {
        h.update(fs::read(dir.join(weight_file(&w.name)))?);
    }
    Ok(hex::encode(h.finalize()))
}
