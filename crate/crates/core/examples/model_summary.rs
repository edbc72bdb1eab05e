//! Layer-by-layer shapes and parameter counts of the three reference stacks.
//!
//! `cargo run --example model_summary -- [width divisor]`

use uti_convlstm::models::{build_table1, scale_width, Architecture};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let divisor: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1);
    for arch in Architecture::ALL {
        let spec = scale_width(&build_table1(arch), divisor)?;
        let shapes = spec.infer_shapes()?;
        let counts = spec.layer_param_counts()?;
        println!("{arch} (input {:?})", spec.input_shape);
        for ((layer, shape), n) in spec.layers.iter().zip(&shapes).zip(&counts) {
            println!(
                "  {:<72} {:<18} {n:>9}",
                layer.describe(),
                format!("{shape:?}")
            );
        }
        println!(
            "  hidden weight layers {}, total {}\n",
            spec.hidden_weight_layers(),
            spec.count_params()?
        );
    }
    Ok(())
}
