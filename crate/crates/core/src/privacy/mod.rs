//! Clipping, the Gaussian mechanism, accounting and noise calibration.

mod accountant;

pub use accountant::{
    calibrate, compose_and_convert, default_orders, epsilon_spent, rdp_of_sampled_gaussian, rdp_to_epsilon, RdpCurve,
    Z_BRACKET,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{l2_norm, RandomSource};

/// `Δ · min(1, S / ‖Δ‖₂)`.
pub fn clip_update(delta: &[f64], clip_norm: f64) -> Vec<f64> {
    let norm = l2_norm(delta);
    if norm <= clip_norm {
        return delta.to_vec();
    }
    let factor = clip_norm / norm;
    let mut out: Vec<f64> = delta.iter().map(|v| v * factor).collect();
    // rounding can leave the result a few ulps above S
    while l2_norm(&out) > clip_norm {
        out.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
    }
    out
}

/// `dim` i.i.d. draws from `N(0, sigma²)`.
pub fn gaussian_noise(dim: usize, sigma: f64, source: &mut RandomSource) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    source.gaussian_vec(dim, sigma)
}

/// Privacy budget and the cohort geometry used to scale noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Per-round sampling rate assumed by the accountant.
    pub q: f64,
    pub rounds: usize,
    pub clip_norm: f64,
    /// Expected cohort size in the simulation.
    pub c_small: f64,
    /// Expected cohort size of the deployment being simulated.
    pub c_large: f64,
    pub population: f64,
}

impl PrivacyConfig {
    /// Production-scale defaults: `C_large = q · population` and no scaling.
    pub fn new(epsilon: f64, delta: f64, q: f64, rounds: usize, clip_norm: f64, population: f64) -> Self {
        Self {
            epsilon,
            delta,
            q,
            rounds,
            clip_norm,
            c_small: q * population,
            c_large: q * population,
            population,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config("privacy.epsilon", "must be finite and > 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("privacy.delta", "must lie in (0, 1)"));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::config("privacy.q", "must lie in (0, 1]"));
        }
        if self.rounds == 0 {
            return Err(Error::config("federation.rounds", "must be >= 1"));
        }
        if !(self.clip_norm > 0.0) || !self.clip_norm.is_finite() {
            return Err(Error::config("privacy.clip_norm", "must be finite and > 0"));
        }
        if !(self.population >= 1.0) {
            return Err(Error::config("privacy.population", "must be >= 1"));
        }
        if !(self.c_small > 0.0) {
            return Err(Error::config("privacy.c_small", "must be > 0"));
        }
        if !(self.c_large >= self.c_small) {
            return Err(Error::config("privacy.c_large", "must be >= c_small"));
        }
        if self.delta >= 1.0 / self.population {
            log::warn!(
                "delta = {} is not below 1/population = {}",
                self.delta,
                1.0 / self.population
            );
        }
        Ok(())
    }

    /// `ε` spent by `rounds` rounds at noise multiplier `z`, with its order.
    pub fn spent(&self, z: f64, rounds: usize) -> Result<(f64, f64)> {
        if z == 0.0 {
            return Ok((f64::INFINITY, f64::NAN));
        }
        epsilon_spent(self.q, z, rounds, self.delta)
    }
}

/// Smallest noise multiplier meeting the configured budget.
pub fn calibrate_noise_multiplier(config: &PrivacyConfig) -> Result<f64> {
    config.validate()?;
    calibrate(config.epsilon, config.delta, config.q, config.rounds)
}

/// Standard deviation of the noise added to the simulated sum:
/// `z · S · C_small / C_large`.
pub fn effective_sigma(config: &PrivacyConfig, z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    z * config.clip_norm * (config.c_small / config.c_large)
}
