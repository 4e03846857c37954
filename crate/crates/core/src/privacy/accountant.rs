//! Rényi-DP accountant for the Poisson-subsampled Gaussian mechanism.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower and upper ends of the bisection bracket for the noise multiplier.
pub const Z_BRACKET: (f64, f64) = (0.3, 50.0);
const Z_TOLERANCE: f64 = 1e-4;

/// Integers 2..=64 plus 1.25, 1.5, 1.75, 128 and 256, ascending.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..=64).map(f64::from));
    orders.extend([128.0, 256.0]);
    orders
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// RDP of one round at integer order `alpha`, from the binomial expansion
/// `A = Σ_k C(α,k) (1−q)^(α−k) q^k exp((k²−k)/(2z²))`, evaluated in log space.
fn rdp_integer_order(q: f64, z: f64, alpha: u64) -> f64 {
    let a = alpha as f64;
    if q == 1.0 {
        return a / (2.0 * z * z);
    }
    let (ln_q, ln_1q) = (q.ln(), (-q).ln_1p());
    let mut ln_binom = 0.0;
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    for k in 0..=alpha {
        if k > 0 {
            ln_binom += ((alpha - k + 1) as f64 / k as f64).ln();
        }
        let kf = k as f64;
        terms.push(ln_binom + (a - kf) * ln_1q + kf * ln_q + (kf * kf - kf) / (2.0 * z * z));
    }
    (log_sum_exp(&terms) / (a - 1.0)).max(0.0)
}

/// Per-order RDP of a single round of the sampled Gaussian mechanism.
/// Fractional orders take the value at the next integer order, which upper
/// bounds them because RDP is nondecreasing in the order.
pub fn rdp_of_sampled_gaussian(q: f64, z: f64, orders: &[f64]) -> Result<Vec<f64>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::param(format!("sampling rate q = {q} must lie in (0, 1]")));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::param(format!("noise multiplier z = {z} must be finite and > 0")));
    }
    orders
        .iter()
        .map(|&alpha| {
            if !(alpha > 1.0) || !alpha.is_finite() {
                return Err(Error::param(format!("RDP order {alpha} must be finite and > 1")));
            }
            Ok(rdp_integer_order(q, z, alpha.ceil() as u64))
        })
        .collect()
}

/// RDP → (ε, δ)-DP at a single order.
pub fn rdp_to_epsilon(rdp: f64, alpha: f64, delta: f64) -> f64 {
    rdp + ((alpha - 1.0) / alpha).ln() - (alpha.ln() + delta.ln()) / (alpha - 1.0)
}

/// Cumulative RDP per order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    orders: Vec<f64>,
    eps: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        if orders.len() != eps.len() || orders.is_empty() {
            return Err(Error::param("orders and RDP values must be non-empty and of equal length"));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) || orders[0] <= 1.0 {
            return Err(Error::param("orders must be ascending and > 1"));
        }
        if eps.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::param("RDP values must be >= 0"));
        }
        Ok(Self { orders, eps })
    }

    /// One round of the sampled Gaussian mechanism on the default order grid.
    pub fn sampled_gaussian(q: f64, z: f64) -> Result<Self> {
        let orders = default_orders();
        let eps = rdp_of_sampled_gaussian(q, z, &orders)?;
        Self::new(orders, eps)
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.eps
    }

    /// Adds another mechanism's RDP (composition is additive per order).
    pub fn compose(&mut self, other: &RdpCurve) -> Result<()> {
        if self.orders != other.orders {
            return Err(Error::param("cannot compose curves over different orders"));
        }
        for (a, b) in self.eps.iter_mut().zip(&other.eps) {
            *a += b;
        }
        Ok(())
    }
}

/// ε after `rounds` repetitions of the mechanism described by `curve`, with
/// the order attaining the minimum. Zero rounds spend nothing.
pub fn compose_and_convert(curve: &RdpCurve, rounds: usize, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta = {delta} must lie in (0, 1)")));
    }
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (&alpha, &rdp) in curve.orders.iter().zip(&curve.eps) {
        let eps = rdp_to_epsilon(rdp * rounds as f64, alpha, delta);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    if rounds == 0 {
        best.0 = 0.0;
    }
    Ok((best.0.max(0.0), best.1))
}

/// ε spent by `rounds` rounds at sampling rate `q` and noise multiplier `z`.
pub fn epsilon_spent(q: f64, z: f64, rounds: usize, delta: f64) -> Result<(f64, f64)> {
    compose_and_convert(&RdpCurve::sampled_gaussian(q, z)?, rounds, delta)
}

/// Smallest `z` in [`Z_BRACKET`] meeting `(epsilon, delta)` after `rounds`
/// rounds at rate `q`, by bisection. Returns the feasible end of the final
/// interval, so the result always satisfies the budget.
pub fn calibrate(epsilon: f64, delta: f64, q: f64, rounds: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::param(format!("epsilon = {epsilon} must be > 0")));
    }
    let feasible = |z: f64| epsilon_spent(q, z, rounds, delta).map(|(e, _)| e <= epsilon);
    let (mut lo, mut hi) = Z_BRACKET;
    if feasible(lo)? {
        return Ok(lo);
    }
    if !feasible(hi)? {
        return Err(Error::Calibration(format!(
            "budget (epsilon = {epsilon}, delta = {delta}) is unreachable for q = {q}, T = {rounds} even at z = {hi}"
        )));
    }
    while hi - lo > Z_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
