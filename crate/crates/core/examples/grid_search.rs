//! The seven four-block stacks of the layer-combination grid, with sizes
//! relative to the 3D-CNN baseline.
//!
//! `cargo run --example grid_search -- [width divisor]`

use uti_convlstm::models::{
    build_table1, build_table3_scaled, scale_width, table3_rows, Architecture,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let divisor: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1);
    let baseline = scale_width(&build_table1(Architecture::Cnn3d), divisor)?.count_params()?;
    println!("baseline 3D-CNN: {baseline} parameters");
    for row in table3_rows() {
        let spec = build_table3_scaled(&row, divisor)?;
        let names: Vec<String> = row.iter().map(|b| b.to_string()).collect();
        let n = spec.count_params()?;
        println!(
            "{:<28} {n:>9}  x{:.3}  output {:?}",
            names.join(" "),
            n as f64 / baseline as f64,
            spec.output_shape()?
        );
    }
    Ok(())
}
