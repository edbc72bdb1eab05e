//! The `uti` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or I/O, 3 model geometry, 4 numerical
//! divergence.

mod checkpoint;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    artifact_hash, load_checkpoint, read_manifest, save_checkpoint, write_atomic,
    CheckpointManifest, TrainedModel, WeightEntry,
};

use crate::data::{
    dataset_hash, gen_synthetic, save_dataset_dir, split_by_utterance, window_starts, Split,
    SynthConfig, WindowedDataset, WINDOW,
};
use crate::error::{Error, Result};
use crate::models::{
    build_table1, build_table3_scaled, scale_width, table3_rows, Architecture, Block, Model,
    ModelSpec,
};
use crate::tensor::{Real, Rng};
use crate::train::{
    evaluate, fit_with, GradCheckReport, Metrics, Optimizer, Precision, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "uti",
    version,
    about = "Ultrasound-to-spectrum regression: synthesize, train, evaluate, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and evaluate every Conv3D/ConvLSTM grid combination.
    Grid(GridArgs),
    /// Print the layer shapes and parameter counts of a model.
    Info(InfoArgs),
    /// Finite-difference check of every layer's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    utterances: usize,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    latent_dim: usize,
}

/// Optimization flags shared by `train` and `grid`.
#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "adam")]
    optimizer: Optimizer,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// Mini-batches per epoch instead of one full pass.
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Stop once the dev mean R² reaches this value.
    #[arg(long)]
    target_r2: Option<f64>,
    #[arg(long, default_value = "f32")]
    precision: Precision,
    /// Divide every filter and unit count (except the output layer) by this.
    #[arg(long, default_value_t = 1)]
    width_div: usize,
}

impl FitArgs {
    fn config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: epochs,
            early_stop_patience: self.patience,
            seed: self.seed,
            precision: self.precision,
            steps_per_epoch: self.steps_per_epoch,
            target_dev_r2: self.target_r2,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Architecture name, grid row such as `C3D-C3D-C3D-CLSTM`, or a model config file.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "dev")]
    split: Split,
    /// Metrics JSON path (default `<ckpt>/metrics_<split>.json`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate even if the dataset differs from the one trained on.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    /// `table3` or a file with one combination per line.
    #[arg(long, default_value = "table3")]
    rows: String,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 1)]
    width_div: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// `all` or one of dense, conv3d, maxpool3d, dropout, lstm, bilstm, convlstm, stack.
    #[arg(long, default_value = "all")]
    scope: String,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Run record written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// SHA-256 of the checkpoint manifest and weights.
    pub artifact_hash: String,
    pub metrics: serde_json::Value,
}

/// A failed command with its process exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Shape(_) | Error::Geometry { .. } => 3,
        Error::Divergence(_) | Error::UndefinedMetric(_) => 4,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Info(a) => cmd_info(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let config = SynthConfig {
        n_utterances: a.utterances,
        frames_per_utterance: a.frames,
        latent_dim: a.latent_dim,
        noise_level: a.noise,
        seed: a.seed,
    };
    let utterances = gen_synthetic(&config)?;
    let splits = split_by_utterance(utterances.len(), a.seed)?;
    save_dataset_dir(&a.out, &utterances, &splits)?;
    let windows: usize = utterances
        .iter()
        .map(|u| window_starts(u.raw.len(), WINDOW).len())
        .sum();
    let count = |s: Split| splits.iter().filter(|&&x| x == s).count();
    println!(
        "wrote {} utterances (train {}, dev {}, test {}) and {windows} windows to {}",
        utterances.len(),
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test),
        a.out.display()
    );
    Ok(())
}

fn parse_combo(text: &str) -> Result<Vec<Block>> {
    text.split(|c: char| c == ',' || c == '-' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

/// Resolves a model argument: a config file path, an architecture name, or
/// a grid combination like `C3D-C3D-CLSTM`.
pub fn resolve_model(arg: &str, width_div: usize) -> Result<ModelSpec> {
    let path = Path::new(arg);
    let spec = if path.is_file() {
        scale_width(
            &ModelSpec::from_config(&fs::read_to_string(path)?)?,
            width_div,
        )?
    } else if let Ok(arch) = arg.parse::<Architecture>() {
        scale_width(&build_table1(arch), width_div)?
    } else if let Ok(combo) = parse_combo(arg) {
        build_table3_scaled(&combo, width_div)?
    } else {
        return Err(Error::Config(format!(
            "`{arg}` is neither a config file, an architecture ({}) nor a grid combination",
            Architecture::ALL.map(|a| a.name()).join(", ")
        )));
    };
    spec.infer_shapes()?;
    Ok(spec)
}

fn check_compatible(spec: &ModelSpec, data: &WindowedDataset) -> Result<()> {
    if spec.input_shape != data.input_shape() {
        return Err(Error::Data(format!(
            "model `{}` expects inputs {:?}, the dataset provides {:?}",
            spec.name,
            spec.input_shape,
            data.input_shape()
        )));
    }
    let dims = data.stats().targets.mean.len();
    if spec.output_shape()? != [dims] {
        return Err(Error::shape(format!(
            "model `{}` outputs {:?}, the dataset has {dims} targets",
            spec.name,
            spec.output_shape()?
        )));
    }
    Ok(())
}

fn log_epoch(prefix: &str) -> impl FnMut(&crate::train::EpochRecord) + '_ {
    move |r| {
        eprintln!(
            "{prefix}epoch {}: train_mse {:.5} dev_mse {:.5} dev_r2 {:.4}",
            r.epoch, r.train_mse, r.dev_mse, r.dev_mean_r2
        )
    }
}

fn train_typed<T: Real>(
    spec: ModelSpec,
    data: &WindowedDataset,
    config: &TrainConfig,
) -> Result<(Model<T>, crate::train::History, Metrics)> {
    let mut model = Model::<T>::new(spec, &mut Rng::with_stream(config.seed, 0))?;
    let history = fit_with(&mut model, data, config, log_epoch(""))?;
    let dev = evaluate(&model, data, Split::Dev)?;
    Ok((model, history, dev))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let started = unix_now();
    let spec = resolve_model(&a.model, a.fit.width_div)?;
    let config = a.fit.config(a.epochs);
    config.validate()?;
    let data = WindowedDataset::from_dir(&a.data, None)?;
    check_compatible(&spec, &data)?;
    let mut manifest = CheckpointManifest {
        spec: spec.clone(),
        precision: config.precision,
        history: Default::default(),
        stats: data.stats().clone(),
        seed: config.seed,
        dataset_hash: dataset_hash(&a.data)?,
        weights: Vec::new(),
    };
    let dev = match config.precision {
        Precision::F32 => {
            let (model, history, dev) = train_typed::<f32>(spec, &data, &config)?;
            manifest.history = history;
            save_checkpoint(&a.out, &model, manifest.clone())?;
            dev
        }
        Precision::F64 => {
            let (model, history, dev) = train_typed::<f64>(spec, &data, &config)?;
            manifest.history = history;
            save_checkpoint(&a.out, &model, manifest.clone())?;
            dev
        }
    };
    write_atomic(
        &a.out.join("history.csv"),
        manifest.history.to_csv().as_bytes(),
    )
    .map_err(Failure::from)?;
    let run = RunManifest {
        command: "train".into(),
        config: serde_json::json!({
            "data": a.data,
            "model": a.model,
            "model_name": manifest.spec.name,
            "train": config,
            "width_div": a.fit.width_div,
        }),
        seed: config.seed,
        started_unix: started,
        finished_unix: unix_now(),
        artifact_hash: artifact_hash(&a.out)?,
        metrics: serde_json::json!({
            "best_epoch": manifest.history.best_epoch,
            "dev_mse": dev.mse,
            "dev_mean_r2": dev.mean_r2,
        }),
    };
    write_atomic(
        &a.out.join("run.json"),
        &serde_json::to_vec_pretty(&run).map_err(Error::from)?,
    )?;
    println!(
        "model {} ({} parameters), best epoch {}",
        manifest.spec.name,
        manifest.spec.count_params()?,
        manifest.history.best_epoch
    );
    println!("dev mse {} mean_r2 {}", dev.mse, dev.mean_r2);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let (manifest, model) = load_checkpoint(&a.ckpt)?;
    let hash = dataset_hash(&a.data)?;
    if hash != manifest.dataset_hash {
        eprintln!(
            "warning: dataset {} differs from the one this checkpoint was trained on",
            a.data.display()
        );
        if !a.force {
            return Err(Failure {
                code: 2,
                message: "dataset hash mismatch; pass --force to evaluate anyway".into(),
            });
        }
    }
    let data = WindowedDataset::from_dir(&a.data, Some(&manifest.stats))?;
    check_compatible(&manifest.spec, &data)?;
    let metrics = match &model {
        TrainedModel::F32(m) => evaluate(m, &data, a.split)?,
        TrainedModel::F64(m) => evaluate(m, &data, a.split)?,
    };
    let json = serde_json::to_string_pretty(&metrics).map_err(Error::from)?;
    let out = a
        .out
        .unwrap_or_else(|| a.ckpt.join(format!("metrics_{}.json", a.split)));
    write_atomic(&out, json.as_bytes())?;
    println!("{json}");
    Ok(())
}

fn grid_rows(arg: &str) -> Result<Vec<Vec<Block>>> {
    if arg == "table3" {
        return Ok(table3_rows());
    }
    fs::read_to_string(arg)?
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(parse_combo)
        .collect()
}

#[derive(Default)]
struct GridResult {
    params: Option<usize>,
    dev: Option<Metrics>,
    test: Option<Metrics>,
}

fn grid_row<T: Real>(
    combo: &[Block],
    data: &WindowedDataset,
    config: &TrainConfig,
    div: usize,
    out: &mut GridResult,
) -> Result<()> {
    let spec = build_table3_scaled(combo, div)?;
    out.params = Some(spec.count_params()?);
    check_compatible(&spec, data)?;
    let name = spec.name.clone();
    let mut model = Model::<T>::new(spec, &mut Rng::with_stream(config.seed, 0))?;
    let prefix = format!("[{name}] ");
    fit_with(&mut model, data, config, log_epoch(&prefix))?;
    out.dev = Some(evaluate(&model, data, Split::Dev)?);
    out.test = Some(evaluate(&model, data, Split::Test)?);
    Ok(())
}

/// Header of the grid results CSV.
pub const GRID_HEADER: &str =
    "layer1,layer2,layer3,layer4,params,dev_mse,test_mse,dev_r2,test_r2,status";

fn cmd_grid(a: GridArgs) -> CmdResult {
    let rows = grid_rows(&a.rows)?;
    let config = a.fit.config(a.epochs);
    config.validate()?;
    let data = WindowedDataset::from_dir(&a.data, None)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    let mut csv = format!("{GRID_HEADER}\n");
    for combo in &rows {
        let mut r = GridResult::default();
        let outcome = match config.precision {
            Precision::F32 => grid_row::<f32>(combo, &data, &config, a.fit.width_div, &mut r),
            Precision::F64 => grid_row::<f64>(combo, &data, &config, a.fit.width_div, &mut r),
        };
        let status = match outcome {
            Ok(()) => "ok".to_string(),
            Err(e) => {
                eprintln!("row {combo:?} failed: {e}");
                format!("error: {}", e.to_string().replace([',', '\n'], ";"))
            }
        };
        for pos in 0..4 {
            if let Some(b) = combo.get(pos) {
                write!(csv, "{b}").unwrap();
            }
            csv.push(',');
        }
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            csv,
            "{},{},{},{},{},{status}",
            r.params.map(|p| p.to_string()).unwrap_or_default(),
            num(r.dev.as_ref().map(|m| m.mse)),
            num(r.test.as_ref().map(|m| m.mse)),
            num(r.dev.as_ref().map(|m| m.mean_r2)),
            num(r.test.as_ref().map(|m| m.mean_r2)),
        )
        .unwrap();
    }
    let path = a.out.join("grid.csv");
    write_atomic(&path, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn cmd_info(a: InfoArgs) -> CmdResult {
    let spec = resolve_model(&a.model, a.width_div)?;
    let shapes = spec.infer_shapes()?;
    let counts = spec.layer_param_counts()?;
    println!("model {}  input {:?}", spec.name, spec.input_shape);
    for (i, ((layer, shape), count)) in spec.layers.iter().zip(&shapes).zip(&counts).enumerate() {
        println!(
            "{i:>3}  {:<72} {:<20} {count:>10}",
            layer.describe(),
            format!("{shape:?}")
        );
    }
    println!("hidden weight layers: {}", spec.hidden_weight_layers());
    println!("total parameters: {}", spec.count_params()?);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let report = GradCheckReport::run(&a.scope, a.tol, a.seed)?;
    for row in &report.rows {
        println!(
            "{:<18} {:<9} {:>6} params+inputs  max rel err {:.3e}  {}",
            row.name,
            row.scope,
            row.checked,
            row.max_rel_error,
            if row.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!(
            "all {} cases pass at tolerance {:e}",
            report.rows.len(),
            a.tol
        );
        Ok(())
    } else {
        let failed = report.rows.iter().filter(|r| !r.passed).count();
        Err(Failure {
            code: 1,
            message: format!(
                "{failed} of {} cases exceed tolerance {:e}",
                report.rows.len(),
                a.tol
            ),
        })
    }
}
