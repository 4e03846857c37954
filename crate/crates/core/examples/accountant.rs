//! Calibrate the noise multiplier for a privacy budget and show how the
//! spent epsilon grows with the number of rounds.
//!
//!     cargo run --example accountant

use dpfl::privacy::{calibrate, epsilon_spent, rdp_of_sampled_gaussian, default_orders};

fn main() -> dpfl::Result<()> {
    let (epsilon, delta, q) = (2.0, 1e-6, 0.01);

    println!("noise multiplier for epsilon = {epsilon}, delta = {delta}, q = {q}");
    println!("{:>6} {:>8} {:>10} {:>6}", "rounds", "z", "epsilon", "order");
    for rounds in [100, 300, 1000, 2000] {
        let z = calibrate(epsilon, delta, q, rounds)?;
        let (spent, order) = epsilon_spent(q, z, rounds, delta)?;
        println!("{rounds:>6} {z:>8.4} {spent:>10.5} {order:>6}");
    }

    // the budget of a fixed z, round by round
    let z = 1.0;
    println!("\nepsilon spent at z = {z}");
    for rounds in [1, 10, 100, 1000] {
        let (spent, _) = epsilon_spent(q, z, rounds, delta)?;
        println!("  after {rounds:>4} rounds: {spent:.4}");
    }

    let orders = default_orders();
    let rdp = rdp_of_sampled_gaussian(q, z, &orders)?;
    println!("\nper-round RDP at a few orders");
    for (a, r) in orders.iter().zip(&rdp).filter(|(a, _)| [2.0, 8.0, 32.0, 256.0].contains(*a)) {
        println!("  alpha = {a:>5}: {r:.3e}");
    }
    Ok(())
}
