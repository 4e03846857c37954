//! How the Dirichlet concentration controls label skew across clients.
//!
//!     cargo run --example dirichlet_partition

use dpfl::data::{generate_synthetic, partition_dirichlet, SyntheticSpec};
use dpfl::numerics::RandomSource;

fn main() -> dpfl::Result<()> {
    let spec = SyntheticSpec {
        classes: 10,
        dim: 4,
        per_class: 500,
        spread: 1.0,
        separation: 1.0,
    };
    let data = generate_synthetic(&spec, &mut RandomSource::new(1, 0))?;

    for alpha in [0.1, 1.0, 100.0] {
        let (shards, matrix) = partition_dirichlet(&data, 100, alpha, &mut RandomSource::new(1, 1))?;
        // mean number of classes that make up 90% of a client's data
        let mut dominant = 0.0;
        for k in 0..shards.len() {
            let mut counts: Vec<usize> = matrix.counts.iter().map(|row| row[k]).collect();
            counts.sort_unstable_by(|a, b| b.cmp(a));
            let total: usize = counts.iter().sum();
            let mut acc = 0;
            let needed = counts.iter().take_while(|&&c| {
                let short = (acc as f64) < 0.9 * total as f64;
                acc += c;
                short
            });
            dominant += needed.count() as f64;
        }
        let sizes: Vec<usize> = shards.iter().map(|s| s.n_k()).collect();
        println!(
            "alpha = {alpha:>5}: {:.1} classes cover 90% of a client, shard sizes {}..{}",
            dominant / shards.len() as f64,
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap()
        );
    }

    let (_, matrix) = partition_dirichlet(&data, 8, 0.1, &mut RandomSource::new(1, 2))?;
    println!("\nclass x client counts, 8 clients, alpha = 0.1");
    for (c, row) in matrix.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|n| format!("{n:>4}")).collect();
        println!("  class {c}: {}", cells.join(""));
    }
    Ok(())
}
