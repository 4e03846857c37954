//! CSV ingestion.
//!
//! Format: UTF-8, comma-separated, header row, `.` decimal separator. One
//! integer label column (default `label`), an optional client column
//! (default `client_id`, used when present) and numeric feature columns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{partition_natural, ClientShard, Dataset, PartitionMatrix};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "default_label")]
    pub label: String,
    /// Client column; when unset, a `client_id` column is used if the header has one.
    #[serde(default)]
    pub client: Option<String>,
    /// Feature columns in order; when unset, every other column is a feature.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    /// Class count; defaults to the largest label plus one.
    #[serde(default)]
    pub classes: Option<usize>,
}

fn default_label() -> String {
    "label".to_string()
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label: default_label(),
            client: None,
            features: None,
            classes: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
    /// Per-sample client key when the file has a client column.
    pub client_keys: Option<Vec<String>>,
}

impl LoadedCsv {
    /// Natural per-client shards, if the file carried a client column.
    pub fn natural_shards(&self) -> Option<Result<(Vec<ClientShard>, PartitionMatrix)>> {
        self.client_keys
            .as_ref()
            .map(|keys| partition_natural(&self.dataset, keys))
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, &e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, &e))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);

    let label_col = find(&schema.label).ok_or_else(|| Error::Schema(format!("label column `{}` not in header", schema.label)))?;
    let client_col = match &schema.client {
        Some(name) => Some(find(name).ok_or_else(|| Error::Schema(format!("client column `{name}` not in header")))?),
        None => find("client_id"),
    };
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names
            .iter()
            .map(|n| find(n).ok_or_else(|| Error::Schema(format!("feature column `{n}` not in header"))))
            .collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&c| c != label_col && Some(c) != client_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut keys = client_col.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |c: usize| record.get(c).unwrap_or("");
        for &c in &feature_cols {
            let v: f64 = cell(c).parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                line,
                message: format!("column `{}`: `{}` is not a number", header[c], cell(c)),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line,
                    message: format!("column `{}`: non-finite value", header[c]),
                });
            }
            data.push(v);
        }
        let label: usize = cell(label_col).parse().map_err(|_| Error::Csv {
            path: path.to_path_buf(),
            line,
            message: format!("column `{}`: `{}` is not a class index", header[label_col], cell(label_col)),
        })?;
        labels.push(label);
        if let (Some(keys), Some(c)) = (keys.as_mut(), client_col) {
            keys.push(cell(c).to_string());
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty("CSV file has no data rows"));
    }
    let classes = schema
        .classes
        .unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1)
        .max(2);
    let features = Matrix::from_vec(labels.len(), feature_cols.len(), data)?;
    Ok(LoadedCsv {
        dataset: Dataset::new(features, labels, classes)?,
        feature_names: feature_cols.iter().map(|&c| header[c].clone()).collect(),
        client_keys: keys,
    })
}

fn csv_error(path: &Path, e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Csv {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}
