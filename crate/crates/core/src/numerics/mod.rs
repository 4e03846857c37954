//! Dense matrices and seeded random sources.

mod matrix;
mod rng;

pub use matrix::{dot, l1_norm, l2_norm, Matrix};
pub use rng::{purpose, Distribution, RandomSource};
