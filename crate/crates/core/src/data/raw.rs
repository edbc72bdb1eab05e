use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Split, Utterance};
use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};

pub const SCANLINES: usize = 64;
pub const SAMPLES_PER_LINE: usize = 946;
pub const FRAME_RATE: f64 = 82.0;

/// Minimum samples per scanline accepted at ingestion.
const MIN_SAMPLES: usize = 128;

/// One recording: `[T, 64, samples]` 8-bit echo intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct RawUtterance {
    pub id: String,
    pub frame_rate: f64,
    pub frames: Tensor<u8>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    id: String,
    frame_rate: f64,
}

impl RawUtterance {
    pub fn new(id: impl Into<String>, frame_rate: f64, frames: Tensor<u8>) -> Result<Self> {
        let u = RawUtterance {
            id: id.into(),
            frame_rate,
            frames,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        match *self.frames.shape() {
            [_, lines, _] if lines != SCANLINES => Err(Error::Data(format!(
                "utterance `{}` has {lines} scanlines, expected {SCANLINES}",
                self.id
            ))),
            [_, _, samples] if samples < MIN_SAMPLES => Err(Error::Data(format!(
                "utterance `{}` has {samples} samples per scanline, need at least {MIN_SAMPLES}",
                self.id
            ))),
            [_, _, _] if !(self.frame_rate > 0.0) => Err(Error::Data(format!(
                "utterance `{}` has non-positive frame rate",
                self.id
            ))),
            [_, _, _] => Ok(()),
            _ => Err(Error::Data(format!(
                "utterance `{}` frames must be [time, scanlines, samples], got {:?}",
                self.id,
                self.frames.shape()
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Reads a u8 tensor file and its JSON sidecar (same stem, `.json`). A
/// missing sidecar falls back to the file stem and the nominal frame rate.
pub fn load_raw(path: impl AsRef<Path>) -> Result<RawUtterance> {
    let path = path.as_ref();
    let frames: Tensor<u8> = io::load(path)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        serde_json::from_slice(&fs::read(&side)?)?
    } else {
        Sidecar {
            id: path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("utterance")
                .to_string(),
            frame_rate: FRAME_RATE,
        }
    };
    RawUtterance::new(meta.id, meta.frame_rate, frames)
}

pub fn save_raw(path: impl AsRef<Path>, utt: &RawUtterance) -> Result<()> {
    let path = path.as_ref();
    io::save(path, &utt.frames)?;
    let meta = Sidecar {
        id: utt.id.clone(),
        frame_rate: utt.frame_rate,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub id: String,
    pub split: Split,
    pub frames: usize,
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub utterances: Vec<UtteranceEntry>,
}

const MANIFEST: &str = "manifest.json";

fn raw_name(id: &str) -> String {
    format!("{id}.stn")
}

fn target_name(id: &str) -> String {
    format!("{id}.targets.stn")
}

/// Writes `<id>.stn` + `<id>.json` + `<id>.targets.stn` per utterance and a
/// manifest with the split assignment.
pub fn save_dataset_dir(
    dir: impl AsRef<Path>,
    utterances: &[Utterance],
    splits: &[Split],
) -> Result<()> {
    let dir = dir.as_ref();
    if utterances.len() != splits.len() {
        return Err(Error::Data(
            "one split assignment per utterance is required".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(utterances.len());
    for (u, &split) in utterances.iter().zip(splits) {
        save_raw(dir.join(raw_name(&u.raw.id)), &u.raw)?;
        io::save(dir.join(target_name(&u.raw.id)), &u.targets)?;
        entries.push(UtteranceEntry {
            id: u.raw.id.clone(),
            split,
            frames: u.raw.len(),
        });
    }
    let manifest = DatasetManifest {
        utterances: entries,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads every utterance of a dataset directory, calling `visit` for each
/// in manifest order so callers can process one recording at a time.
pub fn load_dataset_dir(
    dir: impl AsRef<Path>,
    mut visit: impl FnMut(Split, Utterance) -> Result<()>,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    for entry in &manifest.utterances {
        let raw = load_raw(dir.join(raw_name(&entry.id)))?;
        let targets: Tensor<f32> = io::load(dir.join(target_name(&entry.id)))?;
        if targets.rank() != 2 || targets.shape()[0] != raw.len() {
            return Err(Error::Data(format!(
                "utterance `{}`: {} frames but targets shaped {:?}",
                entry.id,
                raw.len(),
                targets.shape()
            )));
        }
        visit(entry.split, Utterance { raw, targets })?;
    }
    Ok(manifest)
}

/// SHA-256 over the manifest and every utterance file, in manifest order.
pub fn dataset_hash(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut h = Sha256::new();
    h.update(fs::read(dir.join(MANIFEST))?);
    for e in &manifest.utterances {
        let raw = dir.join(raw_name(&e.id));
        for p in [
            raw.clone(),
            sidecar_path(&raw),
            dir.join(target_name(&e.id)),
        ] {
            if p.exists() {
                h.update(fs::read(p)?);
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}
