//! Pairwise-masked secure summation: each masked share looks random, the
//! masks cancel in the sum, and the result matches the plain sum.
//!
//!     cargo run --example secure_sum

use dpfl::numerics::RandomSource;
use dpfl::secure_sum::{exact_sum, mask_shares, aggregate_shares, secure_sum_dp, Aggregation, FixedPointCodec, NoiseMode, SecureSumParams};

fn main() -> dpfl::Result<()> {
    let mut src = RandomSource::new(7, 0);
    let updates: Vec<Vec<f64>> = (0..5).map(|_| src.gaussian_vec(4, 0.1)).collect();
    let codec = FixedPointCodec::default();

    let shares = mask_shares(&updates, &codec, &RandomSource::new(7, 1))?;
    println!("client 0 update:       {:?}", updates[0]);
    println!("client 0 masked share: {:?}", shares[0].masked);

    let masked = aggregate_shares(&shares, &codec)?;
    let plain = exact_sum(&updates)?;
    println!("\nplain sum:  {plain:?}");
    println!("masked sum: {masked:?}");

    // clipping and distributed noise on top of the masked sum
    let params = SecureSumParams {
        clip_norm: Some(0.1),
        sigma: 0.05,
        aggregation: Aggregation::Masked,
        noise_mode: NoiseMode::Distributed,
        codec,
    };
    let noisy = secure_sum_dp(&updates, &params, &RandomSource::new(7, 2))?;
    println!("\nclipped + noised sum (sigma = {}): {noisy:?}", params.sigma);
    Ok(())
}
