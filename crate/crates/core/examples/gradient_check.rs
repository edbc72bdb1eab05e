//! Finite-difference check of every layer's backward pass.
//!
//! `cargo run --example gradient_check -- [scope]`

use uti_convlstm::train::GradCheckReport;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scope = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    let report = GradCheckReport::run(&scope, 1e-4, 7)?;
    for row in &report.rows {
        println!(
            "{:<18} {:<9} checked {:>6}  max rel err {:.3e}  {}",
            row.name,
            row.scope,
            row.checked,
            row.max_rel_error,
            if row.passed { "ok" } else { "FAIL" }
        );
    }
    println!("overall: {}", if report.passed() { "ok" } else { "FAIL" });
    Ok(())
}
