use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::RandomSource;

/// One client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub data: Dataset,
}

impl ClientShard {
    /// Number of local samples.
    pub fn n_k(&self) -> usize {
        self.data.len()
    }
}

/// `counts[i][j]`: samples of class `i` assigned to client `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl PartitionMatrix {
    fn from_shards(shards: &[ClientShard], classes: usize) -> Self {
        let mut counts = vec![vec![0; shards.len()]; classes];
        for (j, s) in shards.iter().enumerate() {
            for &l in s.data.labels() {
                counts[l][j] += 1;
            }
        }
        Self { counts }
    }

    pub fn class_totals(&self) -> Vec<usize> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn client_totals(&self) -> Vec<usize> {
        let clients = self.counts.first().map_or(0, Vec::len);
        (0..clients).map(|j| self.counts.iter().map(|row| row[j]).sum()).collect()
    }
}

/// Integer counts summing to `total` that follow `proportions` as closely as
/// possible; leftover units go to the largest fractional remainders (ties to
/// the lower index).
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Label-skewed split: each class's samples are divided across `clients`
/// according to a Dirichlet(`alpha`) draw. Small `alpha` gives each client
/// very few classes; large `alpha` approaches an IID split.
pub fn partition_dirichlet(
    dataset: &Dataset,
    clients: usize,
    alpha: f64,
    source: &mut RandomSource,
) -> Result<(Vec<ClientShard>, PartitionMatrix)> {
    if clients == 0 {
        return Err(Error::config("data.partition.clients", "at least one client is required"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::config("data.partition.alpha", "alpha must be a finite value > 0"));
    }
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for class in 0..dataset.classes() {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels()[i] == class).collect();
        source.shuffle(&mut idx);
        let proportions = source.dirichlet(alpha, clients);
        let counts = largest_remainder(&proportions, idx.len());
        let mut cursor = 0;
        for (j, &c) in counts.iter().enumerate() {
            assigned[j].extend_from_slice(&idx[cursor..cursor + c]);
            cursor += c;
        }
    }
    let shards = build_shards(dataset, assigned);
    let matrix = PartitionMatrix::from_shards(&shards, dataset.classes());
    Ok((shards, matrix))
}

/// Uniform split: shuffle, then deal samples round-robin.
pub fn partition_iid(
    dataset: &Dataset,
    clients: usize,
    source: &mut RandomSource,
) -> Result<(Vec<ClientShard>, PartitionMatrix)> {
    if clients == 0 {
        return Err(Error::config("data.partition.clients", "at least one client is required"));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    source.shuffle(&mut idx);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for (pos, i) in idx.into_iter().enumerate() {
        assigned[pos % clients].push(i);
    }
    let shards = build_shards(dataset, assigned);
    let matrix = PartitionMatrix::from_shards(&shards, dataset.classes());
    Ok((shards, matrix))
}

/// One shard per distinct client key, in ascending key order.
pub fn partition_natural(dataset: &Dataset, client_keys: &[String]) -> Result<(Vec<ClientShard>, PartitionMatrix)> {
    if client_keys.len() != dataset.len() {
        return Err(Error::param("one client key per sample is required"));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in client_keys.iter().enumerate() {
        groups.entry(k.as_str()).or_default().push(i);
    }
    let shards = build_shards(dataset, groups.into_values().collect());
    let matrix = PartitionMatrix::from_shards(&shards, dataset.classes());
    Ok((shards, matrix))
}

fn build_shards(dataset: &Dataset, assigned: Vec<Vec<usize>>) -> Vec<ClientShard> {
    assigned
        .into_iter()
        .enumerate()
        .map(|(client_id, mut idx)| {
            idx.sort_unstable();
            ClientShard {
                client_id,
                data: dataset.subset(&idx),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn dataset(seed: u64) -> Dataset {
        let spec = SyntheticSpec {
            classes: 10,
            dim: 2,
            per_class: 500,
            spread: 1.0,
            separation: 1.0,
        };
        generate_synthetic(&spec, &mut RandomSource::new(seed, 0)).unwrap()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn largest_remainder_conserves_total() {
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 3), vec![1, 1, 1]);
        assert_eq!(largest_remainder(&[0.5, 0.3, 0.2], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 10).iter().sum::<usize>(), 10);
    }

    #[test]
    fn conservation_for_every_alpha() {
        let data = dataset(1);
        for (seed, alpha) in [(0, 0.01), (1, 0.1), (2, 1.0), (3, 1000.0)] {
            let (shards, m) = partition_dirichlet(&data, 37, alpha, &mut RandomSource::new(seed, 5)).unwrap();
            assert_eq!(m.class_totals(), data.class_counts());
            assert_eq!(m.client_totals(), shards.iter().map(ClientShard::n_k).collect::<Vec<_>>());
            assert_eq!(shards.iter().map(ClientShard::n_k).sum::<usize>(), data.len());
        }
    }

    #[test]
    fn single_client_holds_everything() {
        let data = dataset(2);
        let (shards, m) = partition_dirichlet(&data, 1, 0.1, &mut RandomSource::new(0, 0)).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].data, data);
        assert_eq!(m.counts.iter().map(|r| r[0]).collect::<Vec<_>>(), data.class_counts());
    }

    #[test]
    fn large_alpha_is_close_to_iid() {
        let data = dataset(3);
        let (shards, _) = partition_dirichlet(&data, 100, 1000.0, &mut RandomSource::new(4, 0)).unwrap();
        let tv: Vec<f64> = shards
            .iter()
            .filter(|s| s.n_k() > 0)
            .map(|s| {
                let counts = s.data.class_counts();
                counts
                    .iter()
                    .map(|&c| (c as f64 / s.n_k() as f64 - 0.1).abs())
                    .sum::<f64>()
                    / 2.0
            })
            .collect();
        assert!(median(tv) <= 0.1);
    }

    #[test]
    fn tiny_alpha_gives_few_classes_per_client() {
        let data = dataset(4);
        let (shards, _) = partition_dirichlet(&data, 100, 0.01, &mut RandomSource::new(6, 0)).unwrap();
        let entropy: Vec<f64> = shards
            .iter()
            .filter(|s| s.n_k() > 0)
            .map(|s| {
                s.data
                    .class_counts()
                    .iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| {
                        let p = c as f64 / s.n_k() as f64;
                        -p * p.ln()
                    })
                    .sum::<f64>()
            })
            .collect();
        // ln(10) = 2.30 is the IID value

        assert!(median(entropy) <= 0.1);
    }

    #[test]
    fn iid_split_is_balanced() {
        let data = dataset(5);
        let (shards, _) = partition_iid(&data, 7, &mut RandomSource::new(0, 0)).unwrap();
        let sizes: Vec<usize> = shards.iter().map(ClientShard::n_k).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn natural_split_groups_by_key() {
        let data = dataset(6).subset(&[0, 1, 2, 3]);
        let keys: Vec<String> = ["b", "a", "b", "a"].iter().map(|s| s.to_string()).collect();
        let (shards, _) = partition_natural(&data, &keys).unwrap();
        assert_eq!(shards.len(), 2);
        assert_eq!(shards[0].n_k(), 2);
        assert_eq!(shards[0].data.sample(0), data.sample(1));
    }
}
