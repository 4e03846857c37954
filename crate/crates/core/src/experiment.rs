//! Declarative experiments: TOML config, single runs, grids and output files.
//!
//! A run writes into its output directory:
//!
//! * `rounds.csv`: one row per round, columns
//!   `round,rank,client_ranks,cohort_size,cohort,norm_min,norm_median,norm_max,sigma,skipped,accuracy,best_rank`
//!   (`round` is 1-based, list columns are space-separated, empty cells mean "not applicable");
//! * `rank_eval.csv`: `round,rank,accuracy` for every evaluation point and rank;
//! * `summary.json`: final metrics, privacy spent and the noise actually used;
//! * `config.toml`: the resolved configuration;
//! * `timing.csv`: per-round wall time (the only non-reproducible file).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_with_means, load_csv, partition_dirichlet, partition_iid, partition_natural, ClientShard, CsvSchema,
    Dataset, PartitionMatrix, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::federation::{Federation, FederationConfig, FederationOutput, PrivacySettings};
use crate::model::{local_sgd, pretrain_base, FrozenBase, ModelSnapshot, SgdParams};
use crate::numerics::{purpose, RandomSource};
use crate::peft::PeftMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Dirichlet,
    Iid,
    /// One client per distinct value of the CSV client column.
    Natural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub kind: PartitionKind,
    #[serde(default)]
    pub clients: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

fn d_classes() -> usize {
    10
}
fn d_dim() -> usize {
    20
}
fn d_per_class() -> usize {
    500
}
fn d_one() -> f64 {
    1.0
}
fn d_held_per_class() -> usize {
    100
}
fn d_true() -> bool {
    true
}
fn d_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub source: DataSource,
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_dim")]
    pub dim: usize,
    /// Federated training samples per class.
    #[serde(default = "d_per_class")]
    pub per_class: usize,
    #[serde(default = "d_one")]
    pub spread: f64,
    #[serde(default = "d_one")]
    pub separation: f64,
    /// Server-side evaluation samples per class.
    #[serde(default = "d_held_per_class")]
    pub test_per_class: usize,
    /// Samples per class used to pretrain the frozen base.
    #[serde(default = "d_held_per_class")]
    pub pretrain_per_class: usize,
    /// Pretrain on a seeded permutation of the labels, so the federated task
    /// differs from the pretraining task.
    #[serde(default = "d_true")]
    pub task_shift: bool,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default = "d_fraction")]
    pub test_fraction: f64,
    #[serde(default = "d_fraction")]
    pub pretrain_fraction: f64,
    pub partition: PartitionConfig,
}

fn d_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn d_pre_epochs() -> usize {
    20
}
fn d_pre_lr() -> f64 {
    0.05
}
fn d_pre_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_pre_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "d_pre_lr")]
    pub pretrain_learning_rate: f64,
    #[serde(default = "d_pre_batch")]
    pub pretrain_batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: d_hidden(),
            pretrain_epochs: d_pre_epochs(),
            pretrain_learning_rate: d_pre_lr(),
            pretrain_batch_size: d_pre_batch(),
        }
    }
}

fn d_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_out")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: d_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads for client training; 0 uses every hardware thread.
    #[serde(default)]
    pub threads: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub method: PeftMethod,
    pub federation: FederationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySettings>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn describe(path: &serde_path_to_error::Path, message: String) -> Error {
    let path = path.to_string();
    let path = if path == "." { "<root>".to_string() } else { path };
    Error::config(path, message)
}

/// Reads a TOML file into a table without interpreting it.
pub fn load_table(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

impl ExperimentConfig {
    /// Parses and validates a config table. Relative CSV paths resolve
    /// against `base_dir`.
    pub fn from_table(table: toml::Table, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
                // toml appends its own "in `path`" line; keep the first line only
                let message = e.inner().to_string();
                let message = message.lines().next().unwrap_or_default().trim().to_string();
                describe(e.path(), message)
            })?;
        if let (Some(dir), Some(p)) = (base_dir, cfg.data.path.as_mut()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| Error::config("<input>", e.to_string()))?;
        Self::from_table(table, None)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(load_table(path)?, path.parent())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<output>", e.to_string()))
    }

    /// Checks every field that the type system does not.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                self.synthetic_spec().validate()?;
                if d.test_per_class == 0 {
                    return Err(Error::config("data.test_per_class", "must be >= 1"));
                }
                if d.pretrain_per_class == 0 {
                    return Err(Error::config("data.pretrain_per_class", "must be >= 1"));
                }
                if d.partition.kind == PartitionKind::Natural {
                    return Err(Error::config("data.partition.kind", "natural partitions need a CSV client column"));
                }
            }
            DataSource::Csv => {
                if d.path.is_none() {
                    return Err(Error::config("data.path", "required when source = \"csv\""));
                }
                for (name, v) in [("test_fraction", d.test_fraction), ("pretrain_fraction", d.pretrain_fraction)] {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(Error::config(format!("data.{name}"), "must lie in (0, 1)"));
                    }
                }
                if d.test_fraction + d.pretrain_fraction >= 1.0 {
                    return Err(Error::config("data.pretrain_fraction", "test and pretraining fractions leave no training data"));
                }
            }
        }
        match d.partition.kind {
            PartitionKind::Dirichlet | PartitionKind::Iid => match d.partition.clients {
                None | Some(0) => return Err(Error::config("data.partition.clients", "must be >= 1")),
                Some(_) => {}
            },
            PartitionKind::Natural => {}
        }
        if d.partition.kind == PartitionKind::Dirichlet {
            match d.partition.alpha {
                Some(a) if a > 0.0 && a.is_finite() => {}
                _ => return Err(Error::config("data.partition.alpha", "dirichlet partitions need a finite alpha > 0")),
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be >= 1"));
        }
        SgdParams {
            epochs: self.model.pretrain_epochs.max(1),
            batch_size: self.model.pretrain_batch_size,
            learning_rate: self.model.pretrain_learning_rate,
        }
        .validate()
        .map_err(|_| Error::config("model", "pretraining batch size must be >= 1 and learning rate finite and >= 0"))?;
        self.method.validate()?;
        if let PeftMethod::Compacter { n, .. } = self.method {
            let dims = self
                .input_dim_hint()
                .into_iter()
                .chain(self.model.hidden.iter().copied())
                .chain(std::iter::once(d.classes));
            for w in dims {
                if w % n != 0 {
                    return Err(Error::config("method.n", format!("n = {n} must divide every layer width ({w})")));
                }
            }
        }
        let clients = d.partition.clients.unwrap_or(usize::MAX);
        self.federation.validate(&self.method, clients)?;
        if self.federation.algorithm.is_private() && self.privacy.is_none() {
            return Err(Error::config("privacy", "a [privacy] section is required for private algorithms"));
        }
        Ok(())
    }

    fn input_dim_hint(&self) -> Option<usize> {
        match self.data.source {
            DataSource::Synthetic => Some(self.data.dim),
            DataSource::Csv => None,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.data.classes,
            dim: self.data.dim,
            per_class: self.data.per_class,
            spread: self.data.spread,
            separation: self.data.separation,
        }
    }
}

/// Data, partition and frozen base for one configured run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub base: Arc<FrozenBase>,
    pub train: Dataset,
    pub test: Dataset,
    pub pretrain: Dataset,
    pub shards: Vec<ClientShard>,
    pub partition: PartitionMatrix,
}

fn root_source(cfg: &ExperimentConfig) -> RandomSource {
    RandomSource::new(cfg.seed, 0)
}

/// Generates or loads data, partitions it and pretrains the frozen base.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let root = root_source(cfg);
    let d = &cfg.data;
    let (train, test, pretrain, client_keys) = match d.source {
        DataSource::Synthetic => {
            let spec = cfg.synthetic_spec();
            let mut src = root.derive(&[purpose::DATA]);
            let means = spec.draw_means(&mut src);
            let train = generate_with_means(&means, d.per_class, d.spread, &mut src.derive(&[0]))?;
            let test = generate_with_means(&means, d.test_per_class, d.spread, &mut src.derive(&[1]))?;
            let mut pretrain = generate_with_means(&means, d.pretrain_per_class, d.spread, &mut src.derive(&[2]))?;
            if d.task_shift {
                let mut perm: Vec<usize> = (0..d.classes).collect();
                src.derive(&[3]).shuffle(&mut perm);
                pretrain = pretrain.relabel(&perm)?;
            }
            (train, test, pretrain, None)
        }
        DataSource::Csv => {
            let path = d.path.as_ref().expect("validated");
            let loaded = load_csv(path, &d.schema)?;
            let n = loaded.dataset.len();
            let mut idx: Vec<usize> = (0..n).collect();
            root.derive(&[purpose::SPLIT]).shuffle(&mut idx);
            let n_test = ((n as f64) * d.test_fraction).round() as usize;
            let n_pre = ((n as f64) * d.pretrain_fraction).round() as usize;
            if n_test == 0 || n_pre == 0 || n_test + n_pre >= n {
                return Err(Error::config("data.path", format!("{n} rows are too few to split")));
            }
            let pick = |range: std::ops::Range<usize>| {
                let mut sel = idx[range].to_vec();
                sel.sort_unstable();
                sel
            };
            let (test_idx, pre_idx, train_idx) = (pick(0..n_test), pick(n_test..n_test + n_pre), pick(n_test + n_pre..n));
            let keys = loaded
                .client_keys
                .as_ref()
                .map(|k| train_idx.iter().map(|&i| k[i].clone()).collect::<Vec<_>>());
            (
                loaded.dataset.subset(&train_idx),
                loaded.dataset.subset(&test_idx),
                loaded.dataset.subset(&pre_idx),
                keys,
            )
        }
    };

    let mut part_src = root.derive(&[purpose::PARTITION]);
    let (shards, partition) = match d.partition.kind {
        PartitionKind::Dirichlet => partition_dirichlet(
            &train,
            d.partition.clients.expect("validated"),
            d.partition.alpha.expect("validated"),
            &mut part_src,
        )?,
        PartitionKind::Iid => partition_iid(&train, d.partition.clients.expect("validated"), &mut part_src)?,
        PartitionKind::Natural => {
            let keys = client_keys
                .ok_or_else(|| Error::config("data.partition.kind", "the CSV file has no client column"))?;
            partition_natural(&train, &keys)?
        }
    };

    let params = SgdParams {
        epochs: cfg.model.pretrain_epochs,
        batch_size: cfg.model.pretrain_batch_size,
        learning_rate: cfg.model.pretrain_learning_rate,
    };
    let base = pretrain_base(&pretrain, &cfg.model.hidden, &params, &root.derive(&[purpose::PRETRAIN]))?;
    Ok(Prepared {
        base: Arc::new(base),
        train,
        test,
        pretrain,
        shards,
        partition,
    })
}

/// Accuracy of full fine-tuning on the pooled training data, trained
/// centrally from the same frozen base: the reference a federated run is
/// compared against.
pub fn centralized_oracle(prepared: &Prepared, params: &SgdParams, source: &RandomSource) -> Result<f64> {
    let full = prepared.base.init_peft(PeftMethod::Full, &mut source.derive(&[purpose::PEFT_INIT]))?;
    let mut snap = ModelSnapshot::new(prepared.base.clone(), full);
    let update = local_sgd(&snap, &prepared.train, params, None, &source.derive(&[purpose::LOCAL_TRAIN]))?;
    snap.peft.apply_update(1.0, &update.delta)?;
    snap.evaluate(&prepared.test, None)
}

/// Headline numbers of a run, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub algorithm: String,
    pub method: PeftMethod,
    pub rounds: usize,
    pub clients: usize,
    pub trainable_parameters: usize,
    pub base_accuracy: f64,
    pub final_accuracy: f64,
    pub best_rank: Option<usize>,
    pub rank_accuracy: Vec<(usize, f64)>,
    pub epsilon: Option<f64>,
    pub epsilon_spent: Option<f64>,
    pub rdp_order: Option<f64>,
    pub delta: Option<f64>,
    pub q: Option<f64>,
    pub z: Option<f64>,
    pub sigma: f64,
    pub clip_norm: Option<f64>,
    pub c_small: Option<f64>,
    pub c_large: Option<f64>,
    pub skipped_rounds: usize,
}

/// A finished run held in memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub prepared: Prepared,
    pub output: FederationOutput,
    pub summary: Summary,
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param(format!("cannot start thread pool: {e}")))?;
    pool.install(f)
}

/// Executes a validated config in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    with_threads(cfg.threads, || {
        let prepared = prepare(cfg)?;
        let federation = Federation::new(
            prepared.base.clone(),
            prepared.shards.clone(),
            prepared.test.clone(),
            cfg.method,
            cfg.federation.clone(),
            cfg.privacy.as_ref(),
            root_source(cfg).derive(&[purpose::FEDERATION]),
        )?;
        let init = federation.init_state()?;
        let base_accuracy = ModelSnapshot::new(prepared.base.clone(), init.clone()).evaluate(&prepared.test, None)?;
        let output = federation.run()?;
        let privacy = output.privacy.as_ref();
        let summary = Summary {
            seed: cfg.seed,
            algorithm: serde_json::to_value(cfg.federation.algorithm)?
                .as_str()
                .unwrap_or_default()
                .to_string(),
            method: cfg.method,
            rounds: cfg.federation.rounds,
            clients: prepared.shards.len(),
            trainable_parameters: init.param_count(),
            base_accuracy,
            final_accuracy: output.final_eval.accuracy,
            best_rank: output.final_eval.best_rank,
            rank_accuracy: output.final_eval.rank_accuracy.clone(),
            epsilon: privacy.map(|p| p.epsilon),
            epsilon_spent: output.epsilon_spent.map(|e| e.0),
            rdp_order: output.epsilon_spent.map(|e| e.1),
            delta: privacy.map(|p| p.delta),
            q: privacy.map(|p| p.q),
            z: output.z,
            sigma: output.sigma,
            clip_norm: privacy.map(|p| p.clip_norm).or(cfg.federation.clip_norm),
            c_small: privacy.map(|p| p.c_small),
            c_large: privacy.map(|p| p.c_large),
            skipped_rounds: output.records.iter().filter(|r| r.skipped).count(),
        };
        Ok(RunArtifacts {
            config: cfg.clone(),
            prepared,
            output,
            summary,
        })
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn joined(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_write(w: &mut csv::Writer<fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

fn csv_flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub const ROUNDS_HEADER: [&str; 12] = [
    "round",
    "rank",
    "client_ranks",
    "cohort_size",
    "cohort",
    "norm_min",
    "norm_median",
    "norm_max",
    "sigma",
    "skipped",
    "accuracy",
    "best_rank",
];

/// Writes every output file of a run into `dir`.
pub fn write_outputs(dir: &Path, run: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("rounds.csv");
    let mut w = csv_writer(&path)?;
    csv_write(&mut w, &path, &ROUNDS_HEADER.map(String::from))?;
    for r in &run.output.records {
        let row = [
            (r.round + 1).to_string(),
            opt(r.rank),
            joined(&r.client_ranks),
            r.cohort.len().to_string(),
            joined(&r.cohort),
            opt(r.norm_min),
            opt(r.norm_median),
            opt(r.norm_max),
            r.sigma.to_string(),
            r.skipped.to_string(),
            opt(r.eval.as_ref().map(|e| e.accuracy)),
            opt(r.eval.as_ref().and_then(|e| e.best_rank)),
        ];
        csv_write(&mut w, &path, &row)?;
    }
    csv_flush(w, &path)?;

    let path = dir.join("rank_eval.csv");
    let mut w = csv_writer(&path)?;
    csv_write(&mut w, &path, &["round", "rank", "accuracy"].map(String::from))?;
    for r in &run.output.records {
        let Some(eval) = &r.eval else { continue };
        if eval.rank_accuracy.is_empty() {
            csv_write(&mut w, &path, &[(r.round + 1).to_string(), String::new(), eval.accuracy.to_string()])?;
        }
        for (rank, acc) in &eval.rank_accuracy {
            csv_write(&mut w, &path, &[(r.round + 1).to_string(), rank.to_string(), acc.to_string()])?;
        }
    }
    csv_flush(w, &path)?;

    let path = dir.join("timing.csv");
    let mut w = csv_writer(&path)?;
    csv_write(&mut w, &path, &["round", "wall_time_ms"].map(String::from))?;
    for r in &run.output.records {
        csv_write(&mut w, &path, &[(r.round + 1).to_string(), r.wall_time_ms.to_string()])?;
    }
    csv_flush(w, &path)?;

    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&run.summary)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let path = dir.join("config.toml");
    fs::write(&path, run.config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Runs a config and writes its outputs to `output.dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<Summary> {
    let artifacts = execute(cfg)?;
    write_outputs(&cfg.output.dir, &artifacts)?;
    Ok(artifacts.summary)
}

fn set_path(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config("sweep", "empty key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("sweep.{dotted}"), format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// One cell of a grid: its swept values and fully resolved config.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub index: usize,
    pub assignments: Vec<(String, toml::Value)>,
    pub config: ExperimentConfig,
}

fn collect_sweeps(table: &toml::Table, prefix: &str, out: &mut Vec<(String, Vec<toml::Value>)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Array(values) => {
                if values.is_empty() {
                    return Err(Error::config(format!("sweep.{key}"), "sweep lists must be non-empty"));
                }
                let mut unique: Vec<toml::Value> = Vec::new();
                for x in values {
                    if unique.contains(x) {
                        log::warn!("sweep.{key}: dropping duplicate value {x}");
                    } else {
                        unique.push(x.clone());
                    }
                }
                out.push((key, unique));
            }
            toml::Value::Table(t) => collect_sweeps(t, &key, out)?,
            _ => return Err(Error::config(format!("sweep.{key}"), "sweep entries must be lists")),
        }
    }
    Ok(())
}

/// Expands the `[sweep]` table of a config into its Cartesian product.
/// Each key is a dotted path into the config. Axes are taken in sorted key
/// order with the last varying fastest; cell `i` gets seed
/// `seed + i` unless `seed` itself is swept.
pub fn expand_grid(mut table: toml::Table, base_dir: Option<&Path>) -> Result<Vec<GridCell>> {
    let sweep = match table.remove("sweep") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(Error::config("sweep", "must be a table")),
        None => toml::Table::new(),
    };
    let mut axes = Vec::new();
    collect_sweeps(&sweep, "", &mut axes)?;
    let base_seed = table.get("seed").and_then(toml::Value::as_integer).unwrap_or(0) as u64;
    let seed_swept = axes.iter().any(|(k, _)| k == "seed");

    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut cells = Vec::with_capacity(total);
    for index in 0..total {
        let mut rem = index;
        let mut assignments = Vec::with_capacity(axes.len());
        // last axis varies fastest
        for (key, values) in axes.iter().rev() {
            assignments.push((key.clone(), values[rem % values.len()].clone()));
            rem /= values.len();
        }
        assignments.reverse();
        let mut t = table.clone();
        if !seed_swept {
            t.insert("seed".into(), toml::Value::Integer(base_seed.wrapping_add(index as u64) as i64));
        }
        for (k, v) in &assignments {
            set_path(&mut t, k, v.clone())?;
        }
        let config = ExperimentConfig::from_table(t, base_dir)
            .map_err(|e| Error::config(format!("sweep cell {index}"), e.to_string()))?;
        cells.push(GridCell {
            index,
            assignments,
            config,
        });
    }
    Ok(cells)
}

/// Outcome of one grid cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: GridCell,
    pub dir: PathBuf,
    pub outcome: std::result::Result<Summary, String>,
}

/// Runs every cell (in parallel) under `out_dir/cell-NNN` and writes `index.csv`.
pub fn run_grid(cells: Vec<GridCell>, out_dir: &Path) -> Result<Vec<CellResult>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<CellResult> = cells
        .into_par_iter()
        .map(|mut cell| {
            let dir = out_dir.join(format!("cell-{:03}", cell.index));
            cell.config.output.dir = dir.clone();
            let outcome = run(&cell.config).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::error!("cell {}: {e}", cell.index);
            }
            CellResult { cell, dir, outcome }
        })
        .collect();

    let keys: Vec<String> = results
        .first()
        .map(|r| {
            r.cell
                .assignments
                .iter()
                .map(|(k, _)| k.clone())
                .filter(|k| k != "seed")
                .collect()
        })
        .unwrap_or_default();
    let path = out_dir.join("index.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["cell".to_string(), "dir".into(), "seed".into()];
    header.extend(keys.iter().cloned());
    header.extend(["status".into(), "final_accuracy".into(), "epsilon_spent".into(), "error".into()]);
    csv_write(&mut w, &path, &header)?;
    for r in &results {
        let mut row = vec![
            r.cell.index.to_string(),
            r.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            r.cell.config.seed.to_string(),
        ];
        let values: BTreeMap<&str, String> = r
            .cell
            .assignments
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str().map_or_else(|| v.to_string(), str::to_string)))
            .collect();
        row.extend(keys.iter().map(|k| values.get(k.as_str()).cloned().unwrap_or_default()));
        match &r.outcome {
            Ok(s) => row.extend([
                "ok".into(),
                s.final_accuracy.to_string(),
                opt(s.epsilon_spent),
                String::new(),
            ]),
            Err(e) => row.extend(["failed".into(), String::new(), String::new(), e.clone()]),
        }
        csv_write(&mut w, &path, &row)?;
    }
    csv_flush(w, &path)?;
    Ok(results)
}
