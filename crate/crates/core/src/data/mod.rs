//! Datasets, client partitioning, CSV ingestion and evaluation metrics.

mod csv_io;
mod metrics;
mod partition;
mod synthetic;

pub use csv_io::{load_csv, CsvSchema, LoadedCsv};
pub use metrics::{accuracy, edit_counts, wer, EditCounts};
pub use partition::{partition_dirichlet, partition_iid, partition_natural, ClientShard, PartitionMatrix};
pub use synthetic::{generate_synthetic, generate_with_means, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Labelled samples stored row-wise (`n × dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::param(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::param(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn empty(dim: usize, classes: usize) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Rows `idx` as a `dim × idx.len()` batch plus their labels.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        let dim = self.dim();
        let mut x = Matrix::zeros(dim, idx.len());
        for (j, &i) in idx.iter().enumerate() {
            for (d, &v) in self.features.row(i).iter().enumerate() {
                x.set(d, j, v);
            }
        }
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// The whole dataset as one `dim × n` batch.
    pub fn as_batch(&self) -> (Matrix, Vec<usize>) {
        (self.features.transpose(), self.labels.clone())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let dim = self.dim();
        let mut data = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: Matrix::from_vec(idx.len(), dim, data).expect("rows copied from a valid matrix"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Concatenates datasets with a common dimension and class count.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::Empty("dataset list"))?;
        let (dim, classes) = (first.dim(), first.classes);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != dim || p.classes != classes {
                return Err(Error::param("datasets differ in dimension or class count"));
            }
            data.extend_from_slice(p.features.as_slice());
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels, classes)
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Splits off a held-out fraction by a seeded shuffle: `(rest, held_out)`.
    pub fn split(&self, held_out_fraction: f64, source: &mut crate::numerics::RandomSource) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        source.shuffle(&mut idx);
        let k = ((self.len() as f64) * held_out_fraction).round() as usize;
        let (held, rest) = idx.split_at(k.min(self.len()));
        let mut rest = rest.to_vec();
        let mut held = held.to_vec();
        rest.sort_unstable();
        held.sort_unstable();
        (self.subset(&rest), self.subset(&held))
    }

    /// Relabels every sample through `map` (label `l` becomes `map[l]`).
    pub fn relabel(&self, map: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.clone(),
            self.labels.iter().map(|&l| map[l]).collect(),
            self.classes,
        )
    }
}
