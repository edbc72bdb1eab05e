use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn uti(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uti"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, utterances: usize, frames: usize) -> PathBuf {
    let out = dir.join("data");
    let o = uti(&[
        "synth",
        "--out",
        p(&out),
        "--utterances",
        &utterances.to_string(),
        "--frames",
        &frames.to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

/// A small network on the standard input shape, cheap enough for tests.
const SMALL_MODEL: &str = "name = small
input = 25,128,64,1

[conv3d]
filters = 3
kernel = 5,5,5
strides = 5,4,4
activation = relu

[maxpool3d]
pool = 1,4,4

[flatten]

[dense]
units = 80
";

fn small_model(dir: &Path) -> PathBuf {
    let path = dir.join("small.cfg");
    fs::write(&path, SMALL_MODEL).unwrap();
    path
}

fn train(data: &Path, model: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        p(data),
        "--model",
        p(model),
        "--epochs",
        "2",
        "--out",
        p(out),
        "--seed",
        "3",
    ];
    args.extend_from_slice(extra);
    uti(&args)
}

#[test]
fn synth_reports_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = uti(&[
        "synth",
        "--out",
        p(&a),
        "--utterances",
        "4",
        "--frames",
        "30",
        "--seed",
        "9",
    ]);
    assert!(
        stdout(&o).contains("4 utterances") && stdout(&o).contains("24 windows"),
        "{}",
        stdout(&o)
    );
    uti(&[
        "synth",
        "--out",
        p(&b),
        "--utterances",
        "4",
        "--frames",
        "30",
        "--seed",
        "9",
    ]);
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 4 * 3 + 1);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }
}

#[test]
fn synth_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = uti(&[
        "synth",
        "--out",
        p(&dir.path().join("x")),
        "--utterances",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let o = uti(&[
        "synth",
        "--out",
        p(&blocker.join("sub")),
        "--utterances",
        "3",
        "--frames",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(uti(&["synth"]).status.code(), Some(2));
}

#[test]
fn train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 5, 30);
    let model = small_model(dir.path());
    let ck = dir.path().join("ck");
    let o = train(&data, &model, &ck, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout(&o);
    let line = summary.lines().find(|l| l.starts_with("dev mse")).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    let (mse, r2): (f64, f64) = (fields[2].parse().unwrap(), fields[4].parse().unwrap());

    for f in ["manifest.json", "history.csv", "run.json"] {
        assert!(ck.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(ck.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_mse,dev_mse,dev_mean_r2\n"));

    let e = uti(&[
        "eval",
        "--ckpt",
        p(&ck),
        "--data",
        p(&data),
        "--split",
        "dev",
    ]);
    assert!(e.status.success(), "{}", stderr(&e));
    let json: serde_json::Value = serde_json::from_str(&stdout(&e)).unwrap();
    assert_eq!(json["mse"].as_f64().unwrap(), mse);
    assert_eq!(json["mean_r2"].as_f64().unwrap(), r2);
    assert_eq!(json["r2_per_target"].as_array().unwrap().len(), 80);
    let first = fs::read(ck.join("metrics_dev.json")).unwrap();
    uti(&[
        "eval",
        "--ckpt",
        p(&ck),
        "--data",
        p(&data),
        "--split",
        "dev",
    ]);
    assert_eq!(first, fs::read(ck.join("metrics_dev.json")).unwrap());

    let run: serde_json::Value =
        serde_json::from_slice(&fs::read(ck.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["artifact_hash"].as_str().unwrap().len(), 64);
    assert_eq!(run["seed"], 3);
}

#[test]
fn training_is_reproducible_and_optimizer_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 28);
    let model = small_model(dir.path());
    let runs: Vec<Vec<u8>> = [("a", "adam"), ("b", "adam"), ("c", "sgd")]
        .iter()
        .map(|(name, opt)| {
            let ck = dir.path().join(name);
            let o = train(&data, &model, &ck, &["--optimizer", opt]);
            assert!(o.status.success(), "{}", stderr(&o));
            fs::read(ck.join("history.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_ne!(runs[0], runs[2]);
    let hash = |n: &str| {
        let run: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(n).join("run.json")).unwrap())
                .unwrap();
        run["artifact_hash"].clone()
    };
    assert_eq!(hash("a"), hash("b"));
}

#[test]
fn eval_guards_checkpoint_and_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 26);
    let model = small_model(dir.path());
    let ck = dir.path().join("ck");
    assert!(train(&data, &model, &ck, &[]).status.success());

    let missing = uti(&[
        "eval",
        "--ckpt",
        p(&dir.path().join("nope")),
        "--data",
        p(&data),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let other = dir.path().join("other");
    assert!(uti(&[
        "synth",
        "--out",
        p(&other),
        "--utterances",
        "4",
        "--frames",
        "26",
        "--seed",
        "2"
    ])
    .status
    .success());
    let refused = uti(&["eval", "--ckpt", p(&ck), "--data", p(&other)]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(stderr(&refused).contains("warning"));
    let forced = uti(&[
        "eval",
        "--ckpt",
        p(&ck),
        "--data",
        p(&other),
        "--force",
        "--split",
        "test",
    ]);
    assert!(forced.status.success(), "{}", stderr(&forced));
}

#[test]
fn infeasible_model_exits_3_naming_layer_and_axis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "name = bad\ninput = 25,128,64,1\n[conv3d]\nfilters = 2\nkernel = 5,3,3\nstrides = 5,1,1\n[maxpool3d]\npool = 1,1,128\n[flatten]\n[dense]\nunits = 80\n").unwrap();
    let o = uti(&["info", "--model", p(&cfg)]);
    assert_eq!(o.status.code(), Some(3));
    let msg = stderr(&o);
    assert!(msg.contains("layer 1") && msg.contains("width"), "{msg}");
    let data = synth(dir.path(), 3, 25);
    let o = train(&data, &cfg, &dir.path().join("ck"), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("layer 1"));
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 26);
    let model = small_model(dir.path());
    let o = train(
        &data,
        &model,
        &dir.path().join("ck"),
        &["--optimizer", "sgd", "--lr", "1e30"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn info_reports_reference_layers() {
    let o = uti(&["info", "--model", "cnn3d"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("850500"));
    assert!(text.contains("total parameters: 3425845"));
    let o = uti(&["info", "--model", "cnn3d_bilstm"]);
    assert!(stdout(&o).contains("Reshape((5,340))"));
    let o = uti(&["info", "--model", "cnn3d_convlstm"]);
    assert!(stdout(&o).contains("hidden weight layers: 4"));
    assert_eq!(uti(&["info", "--model", "resnet"]).status.code(), Some(2));
}

#[test]
fn gradcheck_scope_and_tolerance() {
    let o = uti(&["gradcheck", "--scope", "convlstm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o)
        .lines()
        .filter(|l| l.contains("max rel err"))
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with("convlstm")));
    let o = uti(&["gradcheck", "--scope", "dense", "--tol", "1e-12"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn grid_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 26);
    let rows = dir.path().join("rows.txt");
    fs::write(&rows, "# two rows\nC3D C3D\nC3D,C3D,C3D,CLSTM\n").unwrap();
    let out = dir.path().join("grid");
    let args = [
        "grid",
        "--data",
        p(&data),
        "--rows",
        p(&rows),
        "--epochs",
        "1",
        "--out",
        p(&out),
        "--width-div",
        "16",
    ];
    let o = uti(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "layer1,layer2,layer3,layer4,params,dev_mse,test_mse,dev_r2,test_r2,status"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("C3D,C3D,,,") && lines[1].contains("error"));
    assert!(
        lines[2].starts_with("C3D,C3D,C3D,CLSTM,") && lines[2].ends_with(",ok"),
        "{}",
        lines[2]
    );
    assert!(uti(&args).status.success());
    assert_eq!(csv, fs::read_to_string(out.join("grid.csv")).unwrap());
}
