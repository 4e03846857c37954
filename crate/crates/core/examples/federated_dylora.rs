//! A full DP-DyLoRA experiment from a TOML config, then accuracy per rank.
//!
//!     cargo run --release --example federated_dylora [config.toml]

use std::path::PathBuf;

use dpfl::experiment::{self, ExperimentConfig};

fn main() -> dpfl::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/dp_dylora.toml")
    });
    let cfg = ExperimentConfig::load(&path)?;
    let run = experiment::execute(&cfg)?;
    let s = &run.summary;

    println!("base accuracy:  {:.3}", s.base_accuracy);
    println!("final accuracy: {:.3} (best rank {:?})", s.final_accuracy, s.best_rank);
    if let (Some(eps), Some(z)) = (s.epsilon_spent, s.z) {
        println!("z = {z:.4}, sigma = {:.4}, epsilon spent = {eps:.4}", s.sigma);
    }
    println!("\naccuracy when truncated to rank b:");
    for (b, acc) in &s.rank_accuracy {
        println!("  b = {b:>2}: {acc:.3} {}", "#".repeat((acc * 40.0) as usize));
    }

    experiment::write_outputs(&cfg.output.dir, &run)?;
    println!("\noutputs in {}", cfg.output.dir.display());
    Ok(())
}
