//! Seeded, splittable randomness.
//!
//! Every draw in the simulator comes from a [`RandomSource`] keyed by a
//! `(seed, stream)` pair. Child streams are derived by hashing tags such as
//! `(round, client, purpose)` into a fresh stream id, so the values a client
//! sees never depend on how many draws other clients made or on thread
//! scheduling.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution as _, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Stream tags used when deriving child sources.
pub mod purpose {
    pub const BASE_INIT: u64 = 0x10;
    pub const PRETRAIN: u64 = 0x11;
    pub const PEFT_INIT: u64 = 0x12;
    pub const DATA: u64 = 0x20;
    pub const PARTITION: u64 = 0x21;
    pub const SPLIT: u64 = 0x22;
    pub const RANK: u64 = 0x30;
    pub const COHORT: u64 = 0x31;
    pub const LOCAL_TRAIN: u64 = 0x32;
    pub const NOISE: u64 = 0x33;
    pub const MASK: u64 = 0x34;
    pub const CLIENT_NOISE: u64 = 0x35;
    pub const FEDERATION: u64 = 0x40;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Gaussian { mean: f64, std: f64 },
    /// Inclusive on both ends.
    UniformInt { lo: i64, hi: i64 },
    /// Symmetric Dirichlet over `k` categories.
    Dirichlet { alpha: f64, k: usize },
    Bernoulli { p: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Gaussian { mean, std } if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() => {
                Err(Error::param(format!("gaussian requires finite mean and std >= 0, got ({mean}, {std})")))
            }
            Distribution::UniformInt { lo, hi } if lo > hi => {
                Err(Error::param(format!("uniform-int requires lo <= hi, got ({lo}, {hi})")))
            }
            Distribution::Dirichlet { alpha, k } if !(alpha > 0.0) || !alpha.is_finite() || k == 0 => {
                Err(Error::param(format!("dirichlet requires alpha > 0 and k >= 1, got ({alpha}, {k})")))
            }
            Distribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                Err(Error::param(format!("bernoulli requires 0 <= p <= 1, got {p}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh source on the stream obtained by hashing `tags` into this
    /// source's stream id. Does not consume any draws from `self`.
    pub fn derive(&self, tags: &[u64]) -> RandomSource {
        let stream = tags.iter().fold(mix64(self.stream ^ 0xD1B5_4A32_D192_ED03), |acc, &t| {
            mix64(acc ^ mix64(t.wrapping_add(0x9E37_79B9_7F4A_7C15)))
        });
        RandomSource::new(self.seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        mean + std * self.standard_normal()
    }

    pub fn gaussian_vec(&mut self, len: usize, std: f64) -> Vec<f64> {
        (0..len).map(|_| self.gaussian(0.0, std)).collect()
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        Matrix::from_vec(rows, cols, self.gaussian_vec(rows * cols, std))
            .expect("gaussian draws are finite")
    }

    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> i64 {
        self.rng.random_range(lo..=hi)
    }

    pub fn uniform_usize(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        // p = 1 must always succeed
        p >= 1.0 || self.uniform() < p
    }

    /// Symmetric Dirichlet(alpha) over `k` categories.
    ///
    /// Gamma variates are drawn in log space (`G(a) = G(a + 1) · U^{1/a}` for
    /// `a < 1`) so tiny concentrations such as 0.01 do not underflow to an
    /// all-zero vector.
    pub fn dirichlet(&mut self, alpha: f64, k: usize) -> Vec<f64> {
        let log_g: Vec<f64> = (0..k).map(|_| self.log_gamma_variate(alpha)).collect();
        let max = log_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_g.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    fn log_gamma_variate(&mut self, shape: f64) -> f64 {
        if shape >= 1.0 {
            let g: f64 = Gamma::new(shape, 1.0).expect("shape > 0").sample(&mut self.rng);
            g.max(f64::MIN_POSITIVE).ln()
        } else {
            let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("shape > 0").sample(&mut self.rng);
            // 1 - U lies in (0, 1]
            let u = 1.0 - self.uniform();
            g.max(f64::MIN_POSITIVE).ln() + u.ln() / shape
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    /// `amount` distinct indices from `0..len`, in sampled order.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, len, amount).into_vec()
    }

    /// Draws a `rows × cols` matrix from `dist`. Dirichlet draws fill one
    /// probability vector per row, so `cols` must equal `k`.
    pub fn draw(&mut self, dist: Distribution, rows: usize, cols: usize) -> Result<Matrix> {
        dist.validate()?;
        let data = match dist {
            Distribution::Gaussian { mean, std } => (0..rows * cols).map(|_| self.gaussian(mean, std)).collect(),
            Distribution::UniformInt { lo, hi } => (0..rows * cols).map(|_| self.uniform_int(lo, hi) as f64).collect(),
            Distribution::Bernoulli { p } => (0..rows * cols)
                .map(|_| if self.bernoulli(p) { 1.0 } else { 0.0 })
                .collect(),
            Distribution::Dirichlet { alpha, k } => {
                if cols != k {
                    return Err(Error::param(format!("dirichlet draw needs {k} columns, got {cols}")));
                }
                (0..rows).flat_map(|_| self.dirichlet(alpha, k)).collect()
            }
        };
        Matrix::from_vec(rows, cols, data)
    }

    /// Single scalar draw from `dist` (first coordinate for Dirichlet).
    pub fn draw_scalar(&mut self, dist: Distribution) -> Result<f64> {
        let cols = match dist {
            Distribution::Dirichlet { k, .. } => k,
            _ => 1,
        };
        Ok(self.draw(dist, 1, cols)?.get(0, 0))
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RandomSource::new(7, 3);
        let mut b = RandomSource::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RandomSource::new(7, 4);
        assert_ne!(RandomSource::new(7, 3).next_u64(), c.next_u64());
    }

    #[test]
    fn derive_does_not_depend_on_parent_position() {
        let mut parent = RandomSource::new(1, 0);
        let before = parent.derive(&[5, 2]).next_u64();
        parent.next_u64();
        let after = parent.derive(&[5, 2]).next_u64();
        assert_eq!(before, after);
        assert_ne!(parent.derive(&[5, 2]).stream(), parent.derive(&[2, 5]).stream());
    }

    #[test]
    fn degenerate_gaussian_is_exact() {
        let mut r = RandomSource::new(0, 0);
        let m = r.draw(Distribution::Gaussian { mean: 0.0, std: 0.0 }, 3, 3).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dirichlet_near_uniform_for_large_alpha() {
        let mut r = RandomSource::new(11, 0);
        let draws = r.draw(Distribution::Dirichlet { alpha: 1000.0, k: 10 }, 1000, 10).unwrap();
        for row in 0..1000 {
            let s: f64 = draws.row(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for c in 0..10 {
            let mean = draws.col(c).iter().sum::<f64>() / 1000.0;
            assert!((mean - 0.1).abs() < 0.05, "coordinate {c} mean {mean}");
        }
    }

    #[test]
    fn dirichlet_tiny_alpha_sums_to_one() {
        let mut r = RandomSource::new(3, 0);
        for _ in 0..200 {
            let p = r.dirichlet(0.01, 100);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }

    #[test]
    fn uniform_int_frequencies() {
        let mut r = RandomSource::new(5, 9);
        let n = 100_000usize;
        let mut counts = [0usize; 16];
        for _ in 0..n {
            counts[(r.uniform_int(1, 16) - 1) as usize] += 1;
        }
        let p = 1.0 / 16.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for (v, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * se + 1e-12, "value {} freq {freq}", v + 1);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut r = RandomSource::new(0, 0);
        assert!(r.draw(Distribution::Gaussian { mean: 0.0, std: -1.0 }, 1, 1).is_err());
        assert!(r.draw(Distribution::UniformInt { lo: 2, hi: 1 }, 1, 1).is_err());
        assert!(r.draw(Distribution::Dirichlet { alpha: 0.0, k: 3 }, 1, 3).is_err());
        assert!(r.draw(Distribution::Bernoulli { p: 1.5 }, 1, 1).is_err());
    }
}
