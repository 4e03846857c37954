//! Expand a config's [sweep] table and run every cell, like `dpfl grid`.
//!
//!     cargo run --release --example grid_sweep [config.toml]

use std::path::PathBuf;

use dpfl::experiment::{self, load_table};

fn main() -> dpfl::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/grid_sweep.toml")
    });
    let cells = experiment::expand_grid(load_table(&path)?, path.parent())?;
    let out = cells[0].config.output.dir.clone();
    println!("{} cells -> {}", cells.len(), out.display());

    let results = experiment::run_grid(cells, &out)?;
    for r in &results {
        let swept: Vec<String> = r.cell.assignments.iter().map(|(k, v)| format!("{k}={v}")).collect();
        match &r.outcome {
            Ok(s) => println!("  {:<24} accuracy {:.3}  epsilon {:?}", swept.join(" "), s.final_accuracy, s.epsilon_spent),
            Err(e) => println!("  {:<24} failed: {e}", swept.join(" ")),
        }
    }
    Ok(())
}
