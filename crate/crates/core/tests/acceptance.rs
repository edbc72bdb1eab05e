//! Acceptance criteria, run one after another so the wall-time budgets are
//! measured without competing threads. Each prints a single PASS/FAIL line.
//!
//! `cargo test --test acceptance [-- name filter]`

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use uti_convlstm::data::{
    gen_synthetic, split_by_utterance, Dataset, Split, SynthConfig, WindowedDataset,
};
use uti_convlstm::layers::{ConvLstmParams, LstmParams};
use uti_convlstm::models::{
    build_table1, build_table3, scale_width, table3_rows, tiny_convlstm, Architecture, Block,
    LayerSpec, Model, ModelSpec,
};
use uti_convlstm::tensor::{conv3d_forward, conv3d_oracle, ConvGeometry, Padding};
use uti_convlstm::train::{constant_baseline, evaluate, fit_with, TrainConfig};
use uti_convlstm::{Rng, Tensor};

fn report(id: u32, name: &str, passed: bool, detail: String) -> bool {
    println!(
        "criterion {id} [{name}]: {} {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}

fn criterion_1_gradient_suite() -> bool {
    let start = Instant::now();
    let o = uti(&["gradcheck", "--scope", "all", "--tol", "1e-4"]);
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let required = [
        "dense",
        "conv3d_same",
        "conv3d_valid",
        "maxpool3d",
        "dropout_eval",
        "lstm",
        "lstm_peephole",
        "bilstm",
        "convlstm",
        "convlstm_peephole",
        "tiny_convlstm",
    ];
    let rows: Vec<&str> = text.lines().filter(|l| l.contains("max rel err")).collect();
    let present = required
        .iter()
        .all(|n| rows.iter().any(|r| r.split_whitespace().next() == Some(n)));
    let all_pass = rows.iter().all(|r| r.contains("PASS"));
    let ok = o.status.success() && present && all_pass && elapsed < Duration::from_secs(60);
    report(
        1,
        "gradient suite",
        ok,
        format!(
            "{} cases, all pass: {all_pass}, {:.1}s",
            rows.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2_degenerate_convlstm_oracle() -> bool {
    let mut rng = Rng::new(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for peephole in [false, true] {
        for _ in 0..50 {
            let (d, u, t) = (1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(8));
            let mut lstm = LstmParams::<f64>::zeros(d, u, peephole).unwrap();
            for p in lstm.tensors_mut() {
                *p = Tensor::uniform(p.shape(), -1.0, 1.0, &mut rng).unwrap();
            }
            let mut conv =
                ConvLstmParams::zeros(d, u, [1, 1], [1, 1], Padding::Same, peephole).unwrap();
            conv.w_x = lstm.w_x.reshape(&[1, 1, d, 4 * u]).unwrap();
            conv.w_h = lstm.w_h.reshape(&[1, 1, u, 4 * u]).unwrap();
            conv.bias = lstm.bias.clone();
            conv.peephole = lstm.peephole.clone();
            let x = Tensor::uniform(&[t, d], -2.0, 2.0, &mut rng).unwrap();
            for ret in [false, true] {
                let a = lstm.forward(&x, ret).unwrap().0;
                let b = conv
                    .forward(&x.reshape(&[t, 1, 1, d]).unwrap(), ret)
                    .unwrap()
                    .0;
                worst = worst.max(a.max_abs_diff(&b.reshape(a.shape()).unwrap()));
            }
            cases += 1;
        }
    }
    report(
        2,
        "degenerate ConvLSTM = LSTM",
        worst < 1e-12,
        format!("{cases} parameterizations, max |diff| {worst:.2e}"),
    )
}

fn criterion_3_convolution_oracle() -> bool {
    let mut rng = Rng::new(3);
    let mut worst = 0.0f64;
    let mut seen = [false; 2];
    let mut max_stride = 0;
    for i in 0..100 {
        let padding = if i % 2 == 0 {
            Padding::Same
        } else {
            Padding::Valid
        };
        seen[i % 2] = true;
        let kernel = [1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)];
        let strides = [1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)];
        max_stride = max_stride.max(*strides.iter().max().unwrap());
        let dims: Vec<usize> = (0..3).map(|a| kernel[a] + rng.below(8)).collect();
        let (cin, cout) = (1 + rng.below(3), 1 + rng.below(4));
        let g = ConvGeometry::new(cout, kernel, strides, padding);
        let x: Tensor =
            Tensor::uniform(&[dims[0], dims[1], dims[2], cin], -1.0, 1.0, &mut rng).unwrap();
        let w = Tensor::uniform(
            &[kernel[0], kernel[1], kernel[2], cin, cout],
            -1.0,
            1.0,
            &mut rng,
        )
        .unwrap();
        let b = Tensor::uniform(&[cout], -1.0, 1.0, &mut rng).unwrap();
        let fast = conv3d_forward(&x, &w, &b, &g).unwrap();
        let slow = conv3d_oracle(&x, &w, &b, &g).unwrap();
        assert_eq!(fast.shape(), slow.shape());
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    let ok = worst < 1e-10 && seen == [true, true] && max_stride == 3;
    report(
        3,
        "conv3d oracle",
        ok,
        format!("100 geometries, max |diff| {worst:.2e}"),
    )
}

fn criterion_4_reference_geometry() -> bool {
    let bilstm = build_table1(Architecture::Cnn3dBilstm);
    let shapes = bilstm.infer_shapes().unwrap();
    let rec = bilstm
        .layers
        .iter()
        .position(|l| l.kind() == "bilstm")
        .unwrap();
    let reshape_ok = shapes[rec - 1] == [5, 340];

    let cnn = build_table1(Architecture::Cnn3d);
    let flat = cnn
        .layers
        .iter()
        .position(|l| *l == LayerSpec::Flatten)
        .unwrap();
    let flatten_ok = cnn.infer_shapes().unwrap()[flat] == [1700];

    use Block::{C3d, Clstm};
    let equal =
        build_table3(&[C3d, C3d, C3d, Clstm]).unwrap() == build_table1(Architecture::Cnn3dConvlstm);
    report(
        4,
        "reference geometry",
        reshape_ok && flatten_ok && equal,
        format!("reshape (5,340): {reshape_ok}, flatten 1700: {flatten_ok}, grid row = ConvLSTM reference: {equal}"),
    )
}

fn closed_form(layer: &LayerSpec, input: &[usize]) -> usize {
    let cin = *input.last().unwrap();
    let gates = |d: usize, u: usize, area: usize, p: bool| {
        4 * u * area * (d + u) + 4 * u + if p { 3 * u } else { 0 }
    };
    match *layer {
        LayerSpec::Conv3d {
            filters, kernel, ..
        } => kernel.iter().product::<usize>() * cin * filters + filters,
        LayerSpec::Dense { units, .. } => (cin + 1) * units,
        LayerSpec::Lstm {
            units, peephole, ..
        } => gates(cin, units, 1, peephole),
        LayerSpec::Bilstm {
            units, peephole, ..
        } => 2 * gates(cin, units, 1, peephole),
        LayerSpec::Convlstm {
            filters,
            kernel: [kh, kw],
            peephole,
            ..
        } => gates(cin, filters, kh * kw, peephole),
        _ => 0,
    }
}

fn criterion_5_parameter_counts() -> bool {
    let mut specs: Vec<ModelSpec> = Architecture::ALL.iter().map(|&a| build_table1(a)).collect();
    specs.extend(table3_rows().iter().map(|r| build_table3(r).unwrap()));
    specs.push(tiny_convlstm());
    let mut exact = true;
    for spec in &specs {
        let inputs = spec.layer_inputs().unwrap();
        let formula: usize = spec
            .layers
            .iter()
            .zip(&inputs)
            .map(|(l, i)| closed_form(l, i))
            .sum();
        let introspected = Model::<f32>::zeros(spec.clone()).unwrap().param_count();
        exact &= formula == introspected && introspected == spec.count_params().unwrap();
    }

    let conv = LayerSpec::conv3d(30, [5, 13, 13], [5, 2, 2]).param_count(&[25, 128, 64, 1]);
    let bilstm = LayerSpec::Bilstm {
        units: 320,
        return_sequences: false,
        peephole: false,
    }
    .param_count(&[5, 340]);
    let convlstm = LayerSpec::convlstm(64, [3, 3], [2, 2], false).param_count(&[5, 8, 16, 90]);
    let spots = conv == 25_380 && bilstm == 1_692_160 && convlstm == 355_072;

    let baseline = build_table1(Architecture::Cnn3d).count_params().unwrap() as f64;
    let mut parity = true;
    let mut ratios = Vec::new();
    for row in table3_rows() {
        let n = build_table3(&row).unwrap().count_params().unwrap() as f64;
        let ratio = n / baseline;
        parity &= (ratio - 1.0).abs() <= 0.20;
        let tokens: Vec<String> = row.iter().map(|b| b.to_string()).collect();
        ratios.push(format!("{}={ratio:.3}", tokens.join("-")));
    }
    report(
        5,
        "parameter counts",
        exact && spots && parity,
        format!("closed forms: {exact}, spot values: {spots}, grid within 20% of {baseline}: {parity} [{}]", ratios.join(", ")),
    )
}

fn benchmark_config(arch: Architecture) -> TrainConfig {
    TrainConfig {
        learning_rate: if arch == Architecture::Cnn3dBilstm {
            3e-4
        } else {
            1e-3
        },
        batch_size: 8,
        max_epochs: 20,
        early_stop_patience: 5,
        seed: 0,
        steps_per_epoch: Some(60),
        target_dev_r2: Some(0.62),
        ..TrainConfig::default()
    }
}

/// Width divisor applied to all three reference stacks in the benchmark.
const BENCH_WIDTH_DIV: usize = 4;

fn criterion_6_synthetic_end_to_end() -> bool {
    let start = Instant::now();
    let config = SynthConfig {
        n_utterances: 40,
        frames_per_utterance: 200,
        latent_dim: 2,
        noise_level: 0.05,
        seed: 1,
    };
    let utts = gen_synthetic(&config).unwrap();
    let splits = split_by_utterance(utts.len(), config.seed).unwrap();
    let data = WindowedDataset::build(splits.into_iter().zip(utts), None).unwrap();
    let baseline = constant_baseline(&data, Split::Dev).unwrap().mean_r2;

    let mut results = Vec::new();
    let mut all_reach = true;
    for arch in Architecture::ALL {
        let spec = scale_width(&build_table1(arch), BENCH_WIDTH_DIV).unwrap();
        let cfg = benchmark_config(arch);
        let mut model = Model::<f32>::new(spec, &mut Rng::with_stream(cfg.seed, 0)).unwrap();
        let history = fit_with(&mut model, &data, &cfg, |e| {
            eprintln!(
                "[{arch}] epoch {} dev R² {:.3} at {:.0}s",
                e.epoch,
                e.dev_mean_r2,
                start.elapsed().as_secs_f64()
            )
        })
        .unwrap();
        let r2 = evaluate(&model, &data, Split::Dev).unwrap().mean_r2;
        all_reach &= r2 >= 0.6 && history.epochs.len() <= 20;
        results.push(format!(
            "{arch}: dev R² {r2:.3} after {} epochs",
            history.epochs.len()
        ));
    }
    let elapsed = start.elapsed();
    let ok = all_reach && elapsed < Duration::from_secs(15 * 60) && baseline.abs() <= 0.02;
    report(
        6,
        "synthetic end-to-end",
        ok,
        format!(
            "width/{BENCH_WIDTH_DIV}, {}; constant baseline R² {baseline:.4}; {:.0}s",
            results.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn uti(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uti"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let count_b = fs::read_dir(b).unwrap().count();
    names.len() == count_b
        && names
            .iter()
            .all(|n| fs::read(a.join(n)).ok() == fs::read(b.join(n)).ok())
}

fn criterion_7_determinism() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    for name in ["data_a", "data_b"] {
        let o = uti(&[
            "synth",
            "--out",
            d(name).to_str().unwrap(),
            "--utterances",
            "5",
            "--frames",
            "40",
            "--seed",
            "4",
        ]);
        assert!(o.status.success());
    }
    let synth_same = same_tree(&d("data_a"), &d("data_b"));

    let mut histories = Vec::new();
    for name in ["ck_a", "ck_b"] {
        let o = uti(&[
            "train",
            "--data",
            d("data_a").to_str().unwrap(),
            "--model",
            "cnn3d_convlstm",
            "--width-div",
            "4",
            "--epochs",
            "2",
            "--steps-per-epoch",
            "3",
            "--batch-size",
            "4",
            "--seed",
            "11",
            "--out",
            d(name).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        histories.push(fs::read(d(name).join("history.csv")).unwrap());
    }
    let train_same = histories[0] == histories[1];
    report(
        7,
        "determinism",
        synth_same && train_same,
        format!("synth identical: {synth_same}, history identical: {train_same}"),
    )
}

fn criterion_8_preprocessing_invariants() -> bool {
    let config = SynthConfig {
        n_utterances: 10,
        frames_per_utterance: 40,
        ..SynthConfig::default()
    };
    let utts = gen_synthetic(&config).unwrap();
    let splits = split_by_utterance(utts.len(), 1).unwrap();
    let data =
        WindowedDataset::build(splits.iter().copied().zip(utts.iter().cloned()), None).unwrap();

    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &i in data.indices(Split::Train) {
        let x: Tensor<f32> = data.input(i).unwrap();
        for &v in x.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = lo == -1.0 && hi == 1.0;

    let train = data.indices(Split::Train);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    for k in 0..80 {
        let col: Vec<f64> = train.iter().map(|&i| data.target(i)[k]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    let standardized = worst_mean < 1e-6 && worst_std < 1e-6;

    let train_only = splits
        .iter()
        .copied()
        .zip(utts.iter().cloned())
        .filter(|(s, _)| *s == Split::Train);
    let from_train = WindowedDataset::build(train_only, None).unwrap();
    let everything =
        WindowedDataset::build(utts.iter().cloned().map(|u| (Split::Train, u)), None).unwrap();
    let isolated = from_train.stats() == data.stats() && everything.stats() != data.stats();

    report(
        8,
        "preprocessing invariants",
        span && standardized && isolated,
        format!(
            "train range [{lo}, {hi}], max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}, train-only stats: {isolated}"
        ),
    )
}

fn criterion_9_grid_sweep() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("grid");
    let start = Instant::now();
    let o = uti(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--utterances",
        "10",
        "--frames",
        "32",
        "--seed",
        "1",
    ]);
    assert!(o.status.success());
    let o = uti(&[
        "grid",
        "--data",
        data.to_str().unwrap(),
        "--rows",
        "table3",
        "--epochs",
        "5",
        "--width-div",
        "4",
        "--batch-size",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    let elapsed = start.elapsed();
    let csv = fs::read_to_string(out.join("grid.csv")).unwrap_or_default();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let all_ok = rows.iter().all(|r| r.ends_with(",ok"));
    let ok =
        o.status.success() && rows.len() == 7 && all_ok && elapsed < Duration::from_secs(20 * 60);
    report(
        9,
        "grid sweep",
        ok,
        format!(
            "{} rows, all ok: {all_ok}, {:.0}s",
            rows.len(),
            elapsed.as_secs_f64()
        ),
    )
}

type Criterion = fn() -> bool;

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(&str, Criterion); 9] = [
        ("criterion_1_gradient_suite", criterion_1_gradient_suite),
        (
            "criterion_2_degenerate_convlstm_oracle",
            criterion_2_degenerate_convlstm_oracle,
        ),
        (
            "criterion_3_convolution_oracle",
            criterion_3_convolution_oracle,
        ),
        (
            "criterion_4_reference_geometry",
            criterion_4_reference_geometry,
        ),
        ("criterion_5_parameter_counts", criterion_5_parameter_counts),
        (
            "criterion_6_synthetic_end_to_end",
            criterion_6_synthetic_end_to_end,
        ),
        ("criterion_7_determinism", criterion_7_determinism),
        (
            "criterion_8_preprocessing_invariants",
            criterion_8_preprocessing_invariants,
        ),
        ("criterion_9_grid_sweep", criterion_9_grid_sweep),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let passed = std::panic::catch_unwind(run).unwrap_or_else(|_| {
            println!("{name}: FAIL (panicked)");
            false
        });
        if !passed {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
