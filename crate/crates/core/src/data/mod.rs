//! Raw ultrasound recordings, the preprocessing chain from scanlines to
//! normalized 25-frame windows, utterance-level splits, and a synthetic
//! recording generator.

mod preprocess;
mod raw;
mod synth;
mod windowed;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use preprocess::{
    downsample, make_windows, minmax_normalize, split_by_utterance, split_sizes,
    standardize_targets, window_starts, TargetStats, CENTER, WINDOW,
};
pub use raw::{
    dataset_hash, load_dataset_dir, load_raw, save_dataset_dir, save_raw, DatasetManifest,
    RawUtterance, UtteranceEntry, FRAME_RATE, SAMPLES_PER_LINE, SCANLINES,
};
pub use synth::{gen_synthetic, SynthConfig, Utterance};
pub use windowed::{NormStats, WindowedDataset, IMAGE_HEIGHT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                Error::config(format!("unknown split `{s}`, expected train, dev or test"))
            })
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Indexed input/target pairs partitioned into train, dev and test.
pub trait Dataset {
    fn indices(&self, split: Split) -> &[usize];

    /// The model input for sample `index`.
    fn input<T: Real>(&self, index: usize) -> Result<Tensor<T>>;

    /// The (standardized) regression target for sample `index`.
    fn target(&self, index: usize) -> &[f64];
}

/// Fully materialized samples; handy for small toy problems.
#[derive(Clone, Debug)]
pub struct TensorDataset {
    pub inputs: Vec<Tensor<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub splits: [Vec<usize>; 3],
}

impl TensorDataset {
    pub fn new(
        inputs: Vec<Tensor<f64>>,
        targets: Vec<Vec<f64>>,
        splits: [Vec<usize>; 3],
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Data(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if splits.iter().flatten().any(|&i| i >= inputs.len()) {
            return Err(Error::Data("split index out of range".into()));
        }
        Ok(TensorDataset {
            inputs,
            targets,
            splits,
        })
    }
}

impl Dataset for TensorDataset {
    fn indices(&self, split: Split) -> &[usize] {
        &self.splits[split as usize]
    }

    fn input<T: Real>(&self, index: usize) -> Result<Tensor<T>> {
        Ok(self.inputs[index].cast())
    }

    fn target(&self, index: usize) -> &[f64] {
        &self.targets[index]
    }
}
