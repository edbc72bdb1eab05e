use std::ops::Range;

use super::Split;
use crate::error::{Error, Result};
use crate::tensor::{Real, Rng, Tensor};

/// Frames per model input window.
pub const WINDOW: usize = 25;

/// Offset of the frame whose target a window predicts.
pub const CENTER: usize = WINDOW / 2;

/// Resamples every scanline of `[T, lines, samples]` frames to `height`
/// points by linear interpolation (first and last samples map to the first
/// and last points) and lays the result out as `[T, height, lines, 1]`.
pub fn downsample<S: Copy + Into<f64>>(frames: &Tensor<S>, height: usize) -> Result<Tensor<f64>> {
    let (t, lines, samples) = match *frames.shape() {
        [t, l, s] => (t, l, s),
        _ => {
            return Err(Error::shape(format!(
                "frames must be [time, scanlines, samples], got {:?}",
                frames.shape()
            )))
        }
    };
    if samples < 2 || height < 2 {
        return Err(Error::shape(
            "downsampling needs at least two samples and two output rows",
        ));
    }
    let scale = (samples - 1) as f64 / (height - 1) as f64;
    let taps: Vec<(usize, f64)> = (0..height)
        .map(|j| {
            let pos = j as f64 * scale;
            let lo = (pos.floor() as usize).min(samples - 2);
            (lo, pos - lo as f64)
        })
        .collect();
    let src = frames.data();
    let mut out = vec![0.0; t * height * lines];
    for f in 0..t {
        for line in 0..lines {
            let row = &src[(f * lines + line) * samples..][..samples];
            for (j, &(lo, frac)) in taps.iter().enumerate() {
                let a: f64 = row[lo].into();
                let b: f64 = row[lo + 1].into();
                out[(f * height + j) * lines + line] = a + (b - a) * frac;
            }
        }
    }
    Tensor::new(&[t, height, lines, 1], out)
}

/// `2 (x - lo) / (hi - lo) - 1`, clamped to `[-1, 1]`.
pub fn minmax_normalize<T: Real>(x: &Tensor<T>, lo: f64, hi: f64) -> Result<Tensor<T>> {
    if !(hi > lo) {
        return Err(Error::Data(format!(
            "degenerate min-max range [{lo}, {hi}]"
        )));
    }
    let span = hi - lo;
    Ok(x.map(|v| T::of((2.0 * (v.f64() - lo) / span - 1.0).clamp(-1.0, 1.0))))
}

/// Per-column mean and population standard deviation of the training
/// targets.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TargetStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetStats {
    /// Column statistics of the given target rows. Columns with zero spread
    /// are rejected.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || dim == 0 {
            return Err(Error::Data("no target rows to standardize".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            if r.len() != dim {
                return Err(Error::Data("target rows differ in length".into()));
            }
            for (m, &v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, &v), &m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        if let Some(col) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::Data(format!(
                "target column {col} has zero variance on the train split"
            )));
        }
        Ok(TargetStats { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect()
    }
}

/// Standardizes `[N, D]` targets with the given statistics.
pub fn standardize_targets(targets: &Tensor<f64>, stats: &TargetStats) -> Result<Tensor<f64>> {
    match *targets.shape() {
        [_, d] if d == stats.mean.len() => {}
        _ => {
            return Err(Error::shape(format!(
                "targets {:?} do not match {} standardization columns",
                targets.shape(),
                stats.mean.len()
            )))
        }
    }
    let d = stats.mean.len();
    let data = targets
        .data()
        .chunks_exact(d)
        .flat_map(|r| stats.apply(r))
        .collect();
    Tensor::new(targets.shape(), data)
}

/// Start frames of all stride-1 windows inside a sequence of `len` frames.
pub fn window_starts(len: usize, window: usize) -> Range<usize> {
    0..(len + 1).saturating_sub(window)
}

/// Eager windowing of one utterance: each `window`-frame block paired with
/// the target row of its center frame. Returns no samples when the
/// utterance is shorter than the window.
pub fn make_windows<T: Real>(
    frames: &Tensor<T>,
    targets: &Tensor<f64>,
    window: usize,
) -> Result<Vec<(Tensor<T>, Vec<f64>)>> {
    let t = frames.shape()[0];
    if targets.rank() != 2 || targets.shape()[0] != t {
        return Err(Error::Data(format!(
            "{t} frames but targets shaped {:?}",
            targets.shape()
        )));
    }
    let d = targets.shape()[1];
    let per_frame = frames.len() / t;
    let mut shape = frames.shape().to_vec();
    shape[0] = window;
    window_starts(t, window)
        .map(|s| {
            let block = frames.data()[s * per_frame..(s + window) * per_frame].to_vec();
            let c = s + window / 2;
            Ok((
                Tensor::new(&shape, block)?,
                targets.data()[c * d..(c + 1) * d].to_vec(),
            ))
        })
        .collect()
}

const RATIO: [usize; 3] = [310, 41, 87];

/// Split sizes for `n` utterances in the 310:41:87 ratio: largest-remainder
/// rounding, then at least one utterance per split.
pub fn split_sizes(n: usize) -> Result<[usize; 3]> {
    if n < 3 {
        return Err(Error::Data(format!(
            "need at least 3 utterances to split, got {n}"
        )));
    }
    let total: usize = RATIO.iter().sum();
    let mut sizes = RATIO.map(|r| n * r / total);
    let mut order = [0usize, 1, 2];
    order.sort_by_key(|&k| std::cmp::Reverse((n * RATIO[k]) % total));
    let short = n - sizes.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        sizes[k] += 1;
    }
    for k in 0..3 {
        if sizes[k] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).expect("three splits");
            sizes[donor] -= 1;
            sizes[k] = 1;
        }
    }
    Ok(sizes)
}

/// Seeded utterance-level assignment to train, dev and test.
pub fn split_by_utterance(n: usize, seed: u64) -> Result<Vec<Split>> {
    let sizes = split_sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::with_stream(seed, 0x5_1e7).shuffle(&mut order);
    let mut out = vec![Split::Train; n];
    for (rank, &u) in order.iter().enumerate() {
        out[u] = if rank < sizes[0] {
            Split::Train
        } else if rank < sizes[0] + sizes[1] {
            Split::Dev
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_size_examples() {
        assert_eq!(split_sizes(438).unwrap(), [310, 41, 87]);
        assert_eq!(split_sizes(10).unwrap(), [7, 1, 2]);
        assert_eq!(split_sizes(3).unwrap(), [1, 1, 1]);
        assert!(split_sizes(2).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(100, 25).len(), 76);
        assert_eq!(window_starts(25, 25).len(), 1);
        assert_eq!(window_starts(24, 25).len(), 0);
    }

    #[test]
    fn column_standardization() {
        let rows = [[1.0], [2.0], [3.0]];
        let stats = TargetStats::fit(rows.iter().map(|r| &r[..])).unwrap();
        let z: Vec<f64> = rows.iter().flat_map(|r| stats.apply(r)).collect();
        for (a, b) in z.iter().zip([-1.224745, 0.0, 1.224745]) {
            assert!((a - b).abs() < 1e-6);
        }
        let flat = [[4.0, 1.0], [4.0, 2.0]];
        let e = TargetStats::fit(flat.iter().map(|r| &r[..]))
            .unwrap_err()
            .to_string();
        assert!(e.contains("column 0"), "{e}");
    }

    #[test]
    fn normalize_endpoints() {
        let x = Tensor::new(&[3], vec![0.0, 127.5, 255.0]).unwrap();
        assert_eq!(
            minmax_normalize(&x, 0.0, 255.0).unwrap().data(),
            &[-1.0, 0.0, 1.0]
        );
        let above = Tensor::new(&[1], vec![300.0]).unwrap();
        assert_eq!(minmax_normalize(&above, 0.0, 255.0).unwrap().data(), &[1.0]);
        assert!(minmax_normalize(&x, 3.0, 3.0).is_err());
    }
}
