//! Simulated secure aggregation over the ring of 64-bit integers.
//!
//! Each pair of clients `i < j` shares a mask stream; `i` adds the mask and
//! `j` subtracts it, so every individual share is uniform on the ring while
//! the masks cancel in the server's sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{purpose, RandomSource};
use crate::privacy::{clip_update, gaussian_noise};

/// Fixed-point encoding of reals into `Z / 2^64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    scale_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self { scale_bits: 40 }
    }
}

impl FixedPointCodec {
    pub fn new(scale_bits: u32) -> Result<Self> {
        if !(1..=56).contains(&scale_bits) {
            return Err(Error::param("fixed-point scale must be 2^1 ..= 2^56"));
        }
        Ok(Self { scale_bits })
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.scale_bits) as f64
    }

    /// Largest magnitude that encodes without wrapping.
    pub fn max_abs(&self) -> f64 {
        (1u64 << (62 - self.scale_bits)) as f64
    }

    pub fn encode(&self, x: f64) -> Result<u64> {
        if !x.is_finite() || x.abs() > self.max_abs() {
            return Err(Error::Protocol(format!("value {x} is outside the codec range ±{}", self.max_abs())));
        }
        Ok((x * self.scale()).round() as i64 as u64)
    }

    pub fn decode(&self, v: u64) -> f64 {
        v as i64 as f64 / self.scale()
    }

    pub fn encode_vec(&self, xs: &[f64]) -> Result<Vec<u64>> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }
}

/// What one client sends to the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedShare {
    pub client_id: usize,
    pub masked: Vec<u64>,
}

fn check_lengths(contributions: &[Vec<f64>]) -> Result<usize> {
    let dim = contributions.first().ok_or(Error::Empty("contribution list"))?.len();
    if let Some((i, v)) = contributions.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(Error::Protocol(format!(
            "contribution {i} has length {} but the first has length {dim}",
            v.len()
        )));
    }
    Ok(dim)
}

/// Plain coordinate-wise sum; the reference for the masked protocol.
pub fn exact_sum(contributions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = check_lengths(contributions)?;
    let mut sum = vec![0.0; dim];
    for v in contributions {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    Ok(sum)
}

/// Encodes and masks every contribution. Pair masks come from `source`
/// derived by `(i, j)`, so the caller should pass a per-round stream.
pub fn mask_shares(contributions: &[Vec<f64>], codec: &FixedPointCodec, source: &RandomSource) -> Result<Vec<MaskedShare>> {
    let dim = check_lengths(contributions)?;
    let mut shares = contributions
        .iter()
        .enumerate()
        .map(|(client_id, v)| {
            Ok(MaskedShare {
                client_id,
                masked: codec.encode_vec(v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = shares.len();
    for i in 0..n {
        for j in i + 1..n {
            let mut stream = source.derive(&[purpose::MASK, i as u64, j as u64]);
            for d in 0..dim {
                let m = stream.next_u64();
                shares[i].masked[d] = shares[i].masked[d].wrapping_add(m);
                shares[j].masked[d] = shares[j].masked[d].wrapping_sub(m);
            }
        }
    }
    Ok(shares)
}

/// Server side: ring sum of all shares, decoded.
pub fn aggregate_shares(shares: &[MaskedShare], codec: &FixedPointCodec) -> Result<Vec<f64>> {
    let dim = shares.first().ok_or(Error::Empty("share list"))?.masked.len();
    let mut acc = vec![0u64; dim];
    for s in shares {
        if s.masked.len() != dim {
            return Err(Error::Protocol(format!("share from client {} has the wrong length", s.client_id)));
        }
        for (a, m) in acc.iter_mut().zip(&s.masked) {
            *a = a.wrapping_add(*m);
        }
    }
    Ok(acc.into_iter().map(|v| codec.decode(v)).collect())
}

pub fn pairwise_mask_sum(contributions: &[Vec<f64>], codec: &FixedPointCodec, source: &RandomSource) -> Result<Vec<f64>> {
    aggregate_shares(&mask_shares(contributions, codec, source)?, codec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Exact,
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// One draw of `N(0, σ²)` added to the decoded sum.
    #[default]
    Central,
    /// Each of `n` clients adds `N(0, σ²/n)` before encoding.
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecureSumParams {
    /// `None` skips clipping (non-private aggregation).
    pub clip_norm: Option<f64>,
    /// Standard deviation of the total noise on the sum.
    pub sigma: f64,
    pub aggregation: Aggregation,
    pub noise_mode: NoiseMode,
    pub codec: FixedPointCodec,
}

/// Clips every contribution, sums them through the selected backend and adds
/// Gaussian noise of total standard deviation `sigma`.
pub fn secure_sum_dp(contributions: &[Vec<f64>], params: &SecureSumParams, source: &RandomSource) -> Result<Vec<f64>> {
    let dim = check_lengths(contributions)?;
    if let Some(s) = params.clip_norm {
        if !(s > 0.0) {
            return Err(Error::param("clip norm must be > 0"));
        }
    }
    if !(params.sigma >= 0.0) || !params.sigma.is_finite() {
        return Err(Error::param("sigma must be finite and >= 0"));
    }
    let n = contributions.len();
    let prepared: Vec<Vec<f64>> = contributions
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut v = match params.clip_norm {
                Some(s) => clip_update(v, s),
                None => v.clone(),
            };
            if params.noise_mode == NoiseMode::Distributed && params.sigma > 0.0 {
                let share_sigma = params.sigma / (n as f64).sqrt();
                let noise = gaussian_noise(dim, share_sigma, &mut source.derive(&[purpose::CLIENT_NOISE, i as u64]));
                v.iter_mut().zip(noise).for_each(|(x, e)| *x += e);
            }
            v
        })
        .collect();
    let mut sum = match params.aggregation {
        Aggregation::Exact => exact_sum(&prepared)?,
        Aggregation::Masked => pairwise_mask_sum(&prepared, &params.codec, source)?,
    };
    if params.noise_mode == NoiseMode::Central && params.sigma > 0.0 {
        let noise = gaussian_noise(dim, params.sigma, &mut source.derive(&[purpose::NOISE]));
        sum.iter_mut().zip(noise).for_each(|(x, e)| *x += e);
    }
    Ok(sum)
}
