use std::path::Path;

use serde::{Deserialize, Serialize};

use super::preprocess::{downsample, window_starts, TargetStats, CENTER, WINDOW};
use super::raw::load_dataset_dir;
use super::{Dataset, Split, Utterance};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Rows of a downsampled frame (the resampled echo axis).
pub const IMAGE_HEIGHT: usize = 128;

/// Everything needed to preprocess new data exactly like the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_lo: f64,
    pub input_hi: f64,
    pub targets: TargetStats,
}

struct Recording {
    split: Split,
    id: String,
    len: usize,
    lines: usize,
    /// `[len, 128, lines]`, raw intensities until normalized.
    pixels: Vec<f32>,
    targets: Tensor<f32>,
}

/// Normalized `[25, 128, 64, 1]` windows paired with standardized targets.
///
/// Frames are stored once per utterance; windows are cut out on demand, so
/// memory grows with the number of frames rather than frames × 25.
pub struct WindowedDataset {
    recordings: Vec<Recording>,
    windows: Vec<(usize, usize)>,
    targets: Vec<Vec<f64>>,
    splits: [Vec<usize>; 3],
    stats: NormStats,
    skipped: usize,
    target_frame: usize,
}

impl WindowedDataset {
    /// Preprocesses utterances in the given order. Without `stats`, the
    /// min-max range and target statistics are fitted on the train
    /// utterances; with `stats`, they are reused as is.
    pub fn build(
        utterances: impl IntoIterator<Item = (Split, Utterance)>,
        stats: Option<&NormStats>,
    ) -> Result<Self> {
        Self::build_with_target_frame(utterances, stats, CENTER)
    }

    /// Like [`Self::build`] but each window predicts frame `target_frame`
    /// of the window instead of its center.
    pub fn build_with_target_frame(
        utterances: impl IntoIterator<Item = (Split, Utterance)>,
        stats: Option<&NormStats>,
        target_frame: usize,
    ) -> Result<Self> {
        if target_frame >= WINDOW {
            return Err(Error::config(format!(
                "target frame {target_frame} lies outside the window"
            )));
        }
        let mut recordings = Vec::new();
        for (split, u) in utterances {
            recordings.push(Recording::new(split, u)?);
        }
        Self::assemble(recordings, stats, target_frame)
    }

    /// Loads and preprocesses a dataset directory.
    pub fn from_dir(dir: impl AsRef<Path>, stats: Option<&NormStats>) -> Result<Self> {
        let mut recordings = Vec::new();
        load_dataset_dir(dir, |split, u| {
            recordings.push(Recording::new(split, u)?);
            Ok(())
        })?;
        Self::assemble(recordings, stats, CENTER)
    }

    fn assemble(
        mut recordings: Vec<Recording>,
        stats: Option<&NormStats>,
        target_frame: usize,
    ) -> Result<Self> {
        if let Some(r) = recordings.iter().find(|r| r.lines != recordings[0].lines) {
            return Err(Error::Data(format!(
                "utterance `{}` has {} scanlines, others have {}",
                r.id, r.lines, recordings[0].lines
            )));
        }
        let (lo, hi) = match stats {
            Some(s) => (s.input_lo, s.input_hi),
            None => {
                let train = recordings.iter().filter(|r| r.split == Split::Train);
                let (lo, hi) = train
                    .flat_map(|r| r.pixels.iter())
                    .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                if lo > hi {
                    return Err(Error::Data(
                        "no train utterances to fit normalization".into(),
                    ));
                }
                (lo as f64, hi as f64)
            }
        };
        if !(hi > lo) {
            return Err(Error::Data(format!(
                "degenerate min-max range [{lo}, {hi}] on the train split"
            )));
        }
        let span = hi - lo;
        for r in &mut recordings {
            for v in &mut r.pixels {
                *v = (2.0 * (*v as f64 - lo) / span - 1.0).clamp(-1.0, 1.0) as f32;
            }
        }

        let mut windows = Vec::new();
        let mut raw_targets = Vec::new();
        let mut skipped = 0;
        let mut splits: [Vec<usize>; 3] = Default::default();
        for (ri, r) in recordings.iter().enumerate() {
            let starts = window_starts(r.len, WINDOW);
            if starts.is_empty() {
                skipped += 1;
            }
            let d = r.targets.shape()[1];
            for s in starts {
                splits[r.split as usize].push(windows.len());
                windows.push((ri, s));
                let f = s + target_frame;
                raw_targets.push(
                    r.targets.data()[f * d..(f + 1) * d]
                        .iter()
                        .map(|&v| v as f64)
                        .collect::<Vec<_>>(),
                );
            }
        }
        let target_stats = match stats {
            Some(s) => s.targets.clone(),
            None => TargetStats::fit(
                splits[Split::Train as usize]
                    .iter()
                    .map(|&i| raw_targets[i].as_slice()),
            )?,
        };
        if let Some(row) = raw_targets.first() {
            if row.len() != target_stats.mean.len() {
                return Err(Error::Data(format!(
                    "targets have {} columns but the statistics cover {}",
                    row.len(),
                    target_stats.mean.len()
                )));
            }
        }
        let targets = raw_targets.iter().map(|r| target_stats.apply(r)).collect();
        Ok(WindowedDataset {
            recordings,
            windows,
            targets,
            splits,
            stats: NormStats {
                input_lo: lo,
                input_hi: hi,
                targets: target_stats,
            },
            skipped,
            target_frame,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Utterances shorter than one window.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn target_frame(&self) -> usize {
        self.target_frame
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let lines = self.recordings.first().map_or(0, |r| r.lines);
        vec![WINDOW, IMAGE_HEIGHT, lines, 1]
    }

    /// Utterance ids with their split, in build order.
    pub fn utterances(&self) -> Vec<(&str, Split)> {
        self.recordings
            .iter()
            .map(|r| (r.id.as_str(), r.split))
            .collect()
    }

    /// `(utterance position, start frame)` of window `index`.
    pub fn window(&self, index: usize) -> (usize, usize) {
        self.windows[index]
    }

    /// Smallest and largest normalized pixel over the given split.
    pub fn pixel_range(&self, split: Split) -> Option<(f32, f32)> {
        self.recordings
            .iter()
            .filter(|r| r.split == split)
            .flat_map(|r| r.pixels.iter())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((v.min(lo), v.max(hi))),
            })
    }
}

impl Recording {
    fn new(split: Split, u: Utterance) -> Result<Self> {
        u.raw.validate()?;
        let len = u.raw.len();
        if u.targets.rank() != 2 || u.targets.shape()[0] != len {
            return Err(Error::Data(format!(
                "utterance `{}`: {len} frames but targets shaped {:?}",
                u.raw.id,
                u.targets.shape()
            )));
        }
        let lines = u.raw.frames.shape()[1];
        let pixels = downsample(&u.raw.frames, IMAGE_HEIGHT)?
            .into_data()
            .into_iter()
            .map(|v| v as f32)
            .collect();
        Ok(Recording {
            split,
            id: u.raw.id,
            len,
            lines,
            pixels,
            targets: u.targets,
        })
    }
}

impl Dataset for WindowedDataset {
    fn indices(&self, split: Split) -> &[usize] {
        &self.splits[split as usize]
    }

    fn input<T: Real>(&self, index: usize) -> Result<Tensor<T>> {
        let (ri, s) = *self
            .windows
            .get(index)
            .ok_or_else(|| Error::Data(format!("window {index} out of range")))?;
        let r = &self.recordings[ri];
        let frame = IMAGE_HEIGHT * r.lines;
        let data = r.pixels[s * frame..(s + WINDOW) * frame]
            .iter()
            .map(|&v| T::of(v as f64))
            .collect();
        Tensor::new(&[WINDOW, IMAGE_HEIGHT, r.lines, 1], data)
    }

    fn target(&self, index: usize) -> &[f64] {
        &self.targets[index]
    }
}
