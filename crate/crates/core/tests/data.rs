use proptest::prelude::*;
use uti_convlstm::data::{
    dataset_hash, downsample, gen_synthetic, load_dataset_dir, load_raw, make_windows,
    minmax_normalize, save_dataset_dir, save_raw, split_by_utterance, split_sizes,
    standardize_targets, Dataset, RawUtterance, Split, SynthConfig, TargetStats, WindowedDataset,
    CENTER, WINDOW,
};
use uti_convlstm::tensor::io;
use uti_convlstm::{Error, Rng, Tensor};

fn raw(
    t: usize,
    lines: usize,
    samples: usize,
    fill: impl Fn(usize, usize, usize) -> u8,
) -> Tensor<u8> {
    let mut data = Vec::with_capacity(t * lines * samples);
    for f in 0..t {
        for l in 0..lines {
            for s in 0..samples {
                data.push(fill(f, l, s));
            }
        }
    }
    Tensor::new(&[t, lines, samples], data).unwrap()
}

#[test]
fn load_raw_round_trips_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("utt.stn");
    let u = RawUtterance::new("utt", 82.0, raw(3, 64, 946, |f, l, s| (f + l + s) as u8)).unwrap();
    save_raw(&path, &u).unwrap();
    let back = load_raw(&path).unwrap();
    assert_eq!(back.frames.shape(), &[3, 64, 946]);
    assert_eq!(back, u);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(load_raw(&path), Err(Error::Format { .. })));

    io::save(&path, &raw(2, 63, 946, |_, _, _| 0)).unwrap();
    assert!(matches!(load_raw(&path), Err(Error::Data(msg)) if msg.contains("63 scanlines")));
}

#[test]
fn load_raw_accepts_other_sample_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.stn");
    io::save(&path, &raw(1, 64, 964, |_, _, _| 9)).unwrap();
    let u = load_raw(&path).unwrap();
    assert_eq!(u.id, "short");
    assert_eq!(u.frame_rate, 82.0);
    io::save(&path, &raw(1, 64, 100, |_, _, _| 9)).unwrap();
    assert!(load_raw(&path).is_err());
}

#[test]
fn downsample_preserves_ramps_and_constants() {
    let ramp = raw(1, 64, 946, |_, _, s| (s % 256) as u8);
    let frames: Tensor<f64> = ramp.map(|v| v as f64);
    let wide: Vec<f64> = (0..2 * 64 * 946).map(|i| (i % 946) as f64).collect();
    let wide = Tensor::new(&[2, 64, 946], wide).unwrap();
    let out = downsample(&wide, 128).unwrap();
    assert_eq!(out.shape(), &[2, 128, 64, 1]);
    assert_eq!(out.get(&[0, 0, 5, 0]), 0.0);
    assert_eq!(out.get(&[1, 127, 63, 0]), 945.0);
    for r in 0..128 {
        let expected = r as f64 * 945.0 / 127.0;
        assert!((out.get(&[0, r, 17, 0]) - expected).abs() < 1e-9);
    }
    let flat = downsample(&raw(2, 64, 946, |_, _, _| 77), 128).unwrap();
    assert!(flat.data().iter().all(|&v| v == 77.0));
    assert_eq!(downsample(&frames, 128).unwrap().shape(), &[1, 128, 64, 1]);
}

#[test]
fn minmax_endpoints_and_clamping() {
    let x = Tensor::new(&[4], vec![0.0, 127.5, 255.0, 300.0]).unwrap();
    let y = minmax_normalize(&x, 0.0, 255.0).unwrap();
    assert_eq!(y.data(), &[-1.0, 0.0, 1.0, 1.0]);
    assert!(minmax_normalize(&x, 3.0, 3.0).is_err());
}

#[test]
fn target_standardization() {
    let t = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
    let rows: Vec<&[f64]> = t.data().chunks(1).collect();
    let stats = TargetStats::fit(rows).unwrap();
    let z = standardize_targets(&t, &stats).unwrap();
    let s = 1.5f64.sqrt();
    for (a, b) in z.data().iter().zip([-s, 0.0, s]) {
        assert!((a - b).abs() < 1e-12);
    }
    for row in t.data().chunks(1) {
        let back = stats.invert(&stats.apply(row));
        assert!((back[0] - row[0]).abs() < 1e-10);
    }
    let flat = [vec![1.0, 5.0], vec![2.0, 5.0]];
    match TargetStats::fit(flat.iter().map(Vec::as_slice)) {
        Err(Error::Data(msg)) => assert!(msg.contains("column 1"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn window_counts_and_centers() {
    for (t, n) in [(100, 76), (25, 1), (24, 0)] {
        let frames: Tensor = Tensor::new(&[t, 2], (0..2 * t).map(|v| v as f64).collect()).unwrap();
        let targets = Tensor::new(&[t, 1], (0..t).map(|v| v as f64).collect()).unwrap();
        let w = make_windows(&frames, &targets, WINDOW).unwrap();
        assert_eq!(w.len(), n);
        if n > 0 {
            assert_eq!(w[0].1, vec![CENTER as f64]);
            assert_eq!(w[n - 1].1, vec![(t - 1 - CENTER) as f64]);
            assert_eq!(w[0].0.shape(), &[25, 2]);
        }
    }
}

#[test]
fn split_rule() {
    assert_eq!(split_sizes(438).unwrap(), [310, 41, 87]);
    assert_eq!(split_sizes(10).unwrap(), [7, 1, 2]);
    assert_eq!(split_sizes(3).unwrap(), [1, 1, 1]);
    assert!(split_sizes(2).is_err());
    let a = split_by_utterance(40, 3).unwrap();
    assert_eq!(a, split_by_utterance(40, 3).unwrap());
    assert_ne!(a, split_by_utterance(40, 4).unwrap());
}

fn small_synth(n: usize, frames: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_utterances: n,
        frames_per_utterance: frames,
        latent_dim: 2,
        noise_level: 0.05,
        seed,
    }
}

#[test]
fn synth_is_deterministic_and_valid() {
    let a = gen_synthetic(&small_synth(3, 30, 5)).unwrap();
    let b = gen_synthetic(&small_synth(3, 30, 5)).unwrap();
    let c = gen_synthetic(&small_synth(3, 30, 6)).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.raw, y.raw);
        assert!(x
            .targets
            .data()
            .iter()
            .zip(y.targets.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(x.raw.frames.shape(), &[30, 64, 946]);
        assert_eq!(x.targets.shape(), &[30, 80]);
    }
    assert_ne!(a[0].raw, c[0].raw);
    assert_eq!(a[2].raw.id, "synth002");
    assert!(gen_synthetic(&small_synth(0, 30, 5)).is_err());
}

/// Solves `(XᵀX + λI) w = Xᵀy` by Gaussian elimination with partial pivoting.
fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += 1e-10;
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(r);
            for (x, y) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * y;
            }
        }
    }
    let mut w = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| a[i][j] * w[j]).sum();
        w[i] = (a[i][p] - s) / a[i][i];
    }
    w
}

/// Ridge depth of a frame measured as the intensity centroid of the bright
/// band, averaged over scanlines.
fn measured_depth(frames: &Tensor<u8>, t: usize) -> f64 {
    let [_, lines, samples] = [frames.shape()[0], frames.shape()[1], frames.shape()[2]];
    let frame = &frames.data()[t * lines * samples..(t + 1) * lines * samples];
    let mut total = 0.0;
    for line in frame.chunks(samples) {
        let (mut m, mut w) = (0.0, 0.0);
        for (s, &v) in line.iter().enumerate() {
            let excess = (v as f64 - 60.0).max(0.0);
            m += excess * s as f64;
            w += excess;
        }
        total += m / w;
    }
    total / lines as f64
}

#[test]
fn ridge_position_oracle_explains_noise_free_targets() {
    let config = SynthConfig {
        n_utterances: 4,
        frames_per_utterance: 120,
        latent_dim: 1,
        noise_level: 0.0,
        seed: 21,
    };
    let utts = gen_synthetic(&config).unwrap();
    let mut feats = Vec::new();
    let mut targets: Vec<Vec<f64>> = vec![Vec::new(); 80];
    for u in &utts {
        for t in 0..u.raw.len() {
            let d = (measured_depth(&u.raw.frames, t) - 473.0) / 220.0;
            feats.push((0..8).map(|k| d.powi(k)).collect::<Vec<f64>>());
            for (k, col) in targets.iter_mut().enumerate() {
                col.push(u.targets.get(&[t, k]) as f64);
            }
        }
    }
    let mut worst = f64::INFINITY;
    for col in &targets {
        let w = least_squares(&feats, col);
        let pred: Vec<f64> = feats
            .iter()
            .map(|f| f.iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let ss_tot: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = col.iter().zip(&pred).map(|(v, p)| (v - p).powi(2)).sum();
        worst = worst.min(1.0 - ss_res / ss_tot);
    }
    assert!(worst > 0.99, "worst per-target R² {worst}");
}

fn synth_dataset(n: usize, frames: usize, seed: u64) -> (tempfile::TempDir, WindowedDataset) {
    let dir = tempfile::tempdir().unwrap();
    let utts = gen_synthetic(&small_synth(n, frames, seed)).unwrap();
    let splits = split_by_utterance(n, seed).unwrap();
    save_dataset_dir(dir.path(), &utts, &splits).unwrap();
    let ds = WindowedDataset::from_dir(dir.path(), None).unwrap();
    (dir, ds)
}

#[test]
fn windowed_dataset_invariants() {
    let (dir, ds) = synth_dataset(6, 40, 2);
    assert_eq!(ds.len(), 6 * 16);
    let mut all: Vec<usize> = Split::ALL
        .iter()
        .flat_map(|&s| ds.indices(s).to_vec())
        .collect();
    all.sort();
    assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());

    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &i in ds.indices(Split::Train) {
        let x: Tensor<f32> = ds.input(i).unwrap();
        assert_eq!(x.shape(), &[25, 128, 64, 1]);
        for &v in x.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    assert_eq!((lo, hi), (-1.0, 1.0));
    for &i in ds.indices(Split::Dev).iter().chain(ds.indices(Split::Test)) {
        let x: Tensor<f32> = ds.input(i).unwrap();
        assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    let train = ds.indices(Split::Train);
    for k in 0..80 {
        let col: Vec<f64> = train.iter().map(|&i| ds.target(i)[k]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-6 && (var.sqrt() - 1.0).abs() < 1e-6);
    }

    let again = WindowedDataset::from_dir(dir.path(), Some(ds.stats())).unwrap();
    let i = ds.indices(Split::Dev)[3];
    assert_eq!(again.input::<f64>(i).unwrap(), ds.input::<f64>(i).unwrap());
    assert_eq!(again.target(i), ds.target(i));
}

#[test]
fn windows_never_mix_splits() {
    let (_dir, ds) = synth_dataset(5, 30, 8);
    let utts = ds.utterances();
    for split in Split::ALL {
        for &i in ds.indices(split) {
            let (utt, _) = ds.window(i);
            assert_eq!(utts[utt].1, split);
        }
    }
}

#[test]
fn stats_come_from_the_train_split_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut utts = gen_synthetic(&small_synth(5, 30, 4)).unwrap();
    let splits = split_by_utterance(5, 4).unwrap();
    let dev = splits.iter().position(|&s| s == Split::Dev).unwrap();
    let frames = utts[dev].raw.frames.map(|_| 255u8);
    utts[dev].raw.frames = frames;
    for v in utts[dev].targets.data_mut() {
        *v = 50.0;
    }
    save_dataset_dir(dir.path(), &utts, &splits).unwrap();
    let ds = WindowedDataset::from_dir(dir.path(), None).unwrap();

    let train_only: Vec<_> = utts
        .iter()
        .cloned()
        .zip(&splits)
        .filter(|(_, s)| **s == Split::Train)
        .map(|(u, s)| (*s, u))
        .collect();
    let reference = WindowedDataset::build(train_only, None).unwrap();
    assert_eq!(ds.stats(), reference.stats());

    let mut as_train = splits.clone();
    as_train[dev] = Split::Train;
    let leaked =
        WindowedDataset::build(utts.into_iter().zip(as_train).map(|(u, s)| (s, u)), None).unwrap();
    assert_ne!(leaked.stats(), ds.stats());
}

#[test]
fn dataset_directory_round_trip_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let utts = gen_synthetic(&small_synth(3, 26, 1)).unwrap();
    let splits = vec![Split::Train, Split::Dev, Split::Test];
    save_dataset_dir(dir.path(), &utts, &splits).unwrap();
    let mut seen = Vec::new();
    let manifest = load_dataset_dir(dir.path(), |s, u| {
        seen.push((s, u));
        Ok(())
    })
    .unwrap();
    assert_eq!(manifest.utterances.len(), 3);
    assert_eq!(seen[1].0, Split::Dev);
    assert_eq!(seen[2].1.raw, utts[2].raw);
    let h = dataset_hash(dir.path()).unwrap();
    assert_eq!(h, dataset_hash(dir.path()).unwrap());
    let other = tempfile::tempdir().unwrap();
    save_dataset_dir(
        other.path(),
        &utts,
        &[Split::Train, Split::Test, Split::Dev],
    )
    .unwrap();
    assert_ne!(h, dataset_hash(other.path()).unwrap());
}

#[test]
fn short_utterances_are_skipped() {
    let mut utts = gen_synthetic(&small_synth(4, 30, 3)).unwrap();
    utts[3] = gen_synthetic(&SynthConfig {
        frames_per_utterance: 20,
        ..small_synth(4, 30, 3)
    })
    .unwrap()
    .remove(3);
    let splits = [Split::Train, Split::Train, Split::Dev, Split::Test];
    let ds =
        WindowedDataset::build(utts.into_iter().zip(splits).map(|(u, s)| (s, u)), None).unwrap();
    assert_eq!(ds.skipped(), 1);
    assert!(ds.indices(Split::Test).is_empty());
    assert_eq!(ds.len(), 3 * 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_sizes_cover_all(n in 3usize..2000) {
        let s = split_sizes(n).unwrap();
        prop_assert_eq!(s.iter().sum::<usize>(), n);
        prop_assert!(s.iter().all(|&k| k >= 1));
    }

    #[test]
    fn normalized_values_stay_in_range(seed in any::<u64>(), lo in -5.0f64..0.0, span in 0.1f64..10.0) {
        let mut rng = Rng::new(seed);
        let x: Tensor = Tensor::uniform(&[50], lo - span, lo + 2.0 * span, &mut rng).unwrap();
        let y = minmax_normalize(&x, lo, lo + span).unwrap();
        prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
