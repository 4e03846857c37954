pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod model;
pub mod numerics;
pub mod peft;
pub mod privacy;
pub mod secure_sum;

pub use error::{Error, Result};
