//! Trains a narrow reference stack on a small synthetic corpus and compares
//! it with the constant predictor.
//!
//! `cargo run --release --example synthetic_training -- [cnn3d|cnn3d_bilstm|cnn3d_convlstm]`

use uti_convlstm::data::{gen_synthetic, split_by_utterance, Split, SynthConfig, WindowedDataset};
use uti_convlstm::models::{build_table1, scale_width, Architecture, Model};
use uti_convlstm::train::{constant_baseline, evaluate, fit, TrainConfig};
use uti_convlstm::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arch: Architecture = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "cnn3d".into())
        .parse()?;
    let synth = SynthConfig {
        n_utterances: 16,
        frames_per_utterance: 100,
        ..SynthConfig::default()
    };
    let utterances = gen_synthetic(&synth)?;
    let splits = split_by_utterance(utterances.len(), synth.seed)?;
    let data = WindowedDataset::build(splits.into_iter().zip(utterances), None)?;

    let spec = scale_width(&build_table1(arch), 4)?;
    let mut model = Model::<f32>::new(spec, &mut Rng::new(0))?;
    println!(
        "{arch}: {} parameters, {} windows",
        model.param_count(),
        data.len()
    );

    let config = TrainConfig {
        max_epochs: 8,
        batch_size: 8,
        steps_per_epoch: Some(40),
        ..TrainConfig::default()
    };
    let history = fit(&mut model, &data, &config)?;
    print!("{}", history.to_csv());

    let dev = evaluate(&model, &data, Split::Dev)?;
    let base = constant_baseline(&data, Split::Dev)?;
    println!(
        "dev mse {:.4} r2 {:.3} (constant predictor: mse {:.4} r2 {:.3})",
        dev.mse, dev.mean_r2, base.mse, base.mean_r2
    );
    Ok(())
}
