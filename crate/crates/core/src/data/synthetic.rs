use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};

/// Gaussian class clusters: means drawn from `N(0, separation² I)`, samples
/// from `N(mean, spread² I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_separation() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("data.classes", "at least 2 classes are required"));
        }
        if self.dim == 0 {
            return Err(Error::config("data.dim", "dim must be >= 1"));
        }
        if self.per_class == 0 {
            return Err(Error::config("data.per_class", "per_class must be >= 1"));
        }
        if !(self.spread >= 0.0) {
            return Err(Error::config("data.spread", "spread must be >= 0"));
        }
        if !(self.separation >= 0.0) {
            return Err(Error::config("data.separation", "separation must be >= 0"));
        }
        Ok(())
    }

    /// Draws the class means (one row per class).
    pub fn draw_means(&self, source: &mut RandomSource) -> Matrix {
        source.gaussian_matrix(self.classes, self.dim, self.separation)
    }
}

/// Samples a dataset; class means come from the first draws of `source`.
pub fn generate_synthetic(spec: &SyntheticSpec, source: &mut RandomSource) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.draw_means(source);
    generate_with_means(&means, spec.per_class, spec.spread, source)
}

/// Samples `per_class` points around each row of `means`, class-major order.
pub fn generate_with_means(
    means: &Matrix,
    per_class: usize,
    spread: f64,
    source: &mut RandomSource,
) -> Result<Dataset> {
    if means.rows() < 2 {
        return Err(Error::param("at least 2 classes are required"));
    }
    let (classes, dim) = means.shape();
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for _ in 0..per_class {
            data.extend(means.row(c).iter().map(|&m| source.gaussian(m, spread)));
            labels.push(c);
        }
    }
    Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_moments_match_request() {
        let spec = SyntheticSpec {
            classes: 3,
            dim: 4,
            per_class: 4000,
            spread: 0.5,
            separation: 2.0,
        };
        let mut r = RandomSource::new(1, 0);
        let means = spec.draw_means(&mut r.clone());
        let data = generate_synthetic(&spec, &mut r).unwrap();
        assert_eq!(data.len(), 12_000);
        let n = spec.per_class as f64;
        for c in 0..3 {
            let rows: Vec<&[f64]> = (0..data.len()).filter(|&i| data.labels()[i] == c).map(|i| data.sample(i)).collect();
            for d in 0..4 {
                let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                // 4 standard errors of the sample mean and sample variance
                assert!((mean - means.get(c, d)).abs() < 4.0 * 0.5 / n.sqrt());
                assert!((var - 0.25).abs() < 4.0 * 0.25 * (2.0 / (n - 1.0)).sqrt());
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            classes: 2,
            dim: 3,
            per_class: 10,
            spread: 1.0,
            separation: 1.0,
        };
        let a = generate_synthetic(&spec, &mut RandomSource::new(9, 1)).unwrap();
        let b = generate_synthetic(&spec, &mut RandomSource::new(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_single_class() {
        let spec = SyntheticSpec {
            classes: 1,
            dim: 3,
            per_class: 10,
            spread: 1.0,
            separation: 1.0,
        };
        assert!(generate_synthetic(&spec, &mut RandomSource::new(0, 0)).is_err());
    }
}
