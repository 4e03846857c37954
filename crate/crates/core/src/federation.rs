//! The federated training loop: cohort sampling, rank sampling, local
//! training, secure aggregation with DP noise and the averaged server update.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::model::{local_sgd, FrozenBase, ModelSnapshot, SgdParams};
use crate::numerics::{l2_norm, purpose, RandomSource};
use crate::peft::{adalora_prune, singular_value_magnitudes, PeftMethod, PeftState};
use crate::privacy::{calibrate, effective_sigma, PrivacyConfig};
use crate::secure_sum::{secure_sum_dp, Aggregation, FixedPointCodec, NoiseMode, SecureSumParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Non-private federated averaging with any method.
    #[serde(rename = "fedavg")]
    FedAvg,
    /// DP federated averaging of full fine-tuning updates.
    #[serde(rename = "dp-fedavg")]
    DpFedAvg,
    /// DP federated averaging of a fixed-shape PEFT method.
    DpPeft,
    /// DP federated DyLoRA with one rank per round.
    DpDylora,
}

impl Algorithm {
    pub fn is_private(&self) -> bool {
        !matches!(self, Algorithm::FedAvg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CohortMode {
    /// Each client joins independently with probability `q`.
    #[default]
    Poisson,
    /// Exactly `cohort_size` distinct clients per round.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankSampling {
    /// One DyLoRA rank per round, shared by the cohort.
    #[default]
    Server,
    /// Every client draws its own rank.
    PerClient,
}

fn default_q() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    1
}
fn default_batch() -> usize {
    16
}
fn default_eval_interval() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    /// Simulated per-round sampling rate.
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub cohort: CohortMode,
    #[serde(default)]
    pub cohort_size: Option<usize>,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default)]
    pub rank_sampling: RankSampling,
    /// Clip norm for non-private runs; private runs use `privacy.clip_norm`.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub noise_mode: NoiseMode,
}

impl FederationConfig {
    pub fn sgd(&self) -> SgdParams {
        SgdParams {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
        }
    }

    pub fn validate(&self, method: &PeftMethod, clients: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("federation.rounds", "must be >= 1"));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::config("federation.q", "must lie in (0, 1]"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("federation.eval_interval", "must be >= 1"));
        }
        self.sgd().validate()?;
        match (self.cohort, self.cohort_size) {
            (CohortMode::Fixed, None) => {
                return Err(Error::config("federation.cohort_size", "required when cohort = \"fixed\""))
            }
            (CohortMode::Fixed, Some(n)) if n == 0 || n > clients => {
                return Err(Error::config(
                    "federation.cohort_size",
                    format!("must be in 1..={clients}"),
                ))
            }
            _ => {}
        }
        if let Some(s) = self.clip_norm {
            if !(s > 0.0) {
                return Err(Error::config("federation.clip_norm", "must be > 0"));
            }
        }
        match (self.algorithm, method) {
            (Algorithm::DpFedAvg, m) if !matches!(m, PeftMethod::Full) => Err(Error::config(
                "method.kind",
                format!("dp-fedavg trains the full model, not {}", m.name()),
            )),
            (Algorithm::DpPeft, m) if m.is_dylora() => Err(Error::config(
                "method.kind",
                "dylora under DP uses algorithm = \"dp-dylora\"",
            )),
            (Algorithm::DpDylora, m) if !m.is_dylora() => Err(Error::config(
                "method.kind",
                format!("dp-dylora requires method dylora, not {}", m.name()),
            )),
            _ => Ok(()),
        }
    }

    /// Expected simulated cohort size.
    pub fn expected_cohort(&self, clients: usize) -> f64 {
        match self.cohort {
            CohortMode::Poisson => self.q * clients as f64,
            CohortMode::Fixed => self.cohort_size.unwrap_or(0) as f64,
        }
    }
}

fn default_delta() -> f64 {
    1e-6
}
fn default_accounting_q() -> f64 {
    0.01
}
fn default_population() -> f64 {
    1e6
}

/// Privacy budget as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySettings {
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Sampling rate of the deployment being accounted for.
    #[serde(default = "default_accounting_q")]
    pub q: f64,
    #[serde(default = "default_population")]
    pub population: f64,
    pub clip_norm: f64,
    /// Defaults to `q · population`.
    #[serde(default)]
    pub c_large: Option<f64>,
    /// Defaults to the expected simulated cohort.
    #[serde(default)]
    pub c_small: Option<f64>,
    /// Skips calibration and uses this multiplier.
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
}

impl PrivacySettings {
    pub fn resolve(&self, rounds: usize, expected_cohort: f64) -> PrivacyConfig {
        let mut cfg = PrivacyConfig::new(self.epsilon, self.delta, self.q, rounds, self.clip_norm, self.population);
        cfg.c_large = self.c_large.unwrap_or(self.q * self.population);
        cfg.c_small = self.c_small.unwrap_or(expected_cohort);
        cfg
    }
}

/// Cohort for one round, sorted ascending.
pub fn sample_cohort(population: usize, mode: CohortMode, q: f64, size: Option<usize>, source: &mut RandomSource) -> Result<Vec<usize>> {
    match mode {
        CohortMode::Poisson => {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::param("q must lie in (0, 1]"));
            }
            Ok((0..population).filter(|_| source.bernoulli(q)).collect())
        }
        CohortMode::Fixed => {
            let n = size.ok_or_else(|| Error::param("fixed cohorts need a size"))?;
            if n > population {
                return Err(Error::param(format!("cohort of {n} from a population of {population}")));
            }
            let mut ids = source.sample_indices(population, n);
            ids.sort_unstable();
            Ok(ids)
        }
    }
}

/// Accuracy on the server's held-out data, per DyLoRA rank where relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Best accuracy over evaluated ranks (the only accuracy otherwise).
    pub accuracy: f64,
    pub best_rank: Option<usize>,
    /// `(rank, accuracy)` for DyLoRA, ascending rank.
    pub rank_accuracy: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Server-sampled DyLoRA rank.
    pub rank: Option<usize>,
    /// Rank trained by each cohort member, in cohort order (DyLoRA only).
    pub client_ranks: Vec<usize>,
    pub cohort: Vec<usize>,
    pub norm_min: Option<f64>,
    pub norm_median: Option<f64>,
    pub norm_max: Option<f64>,
    pub sigma: f64,
    /// Present on evaluation rounds.
    pub eval: Option<Evaluation>,
    /// The cohort was empty and the model did not change.
    pub skipped: bool,
    pub wall_time_ms: f64,
}

/// Everything one experiment produced.
#[derive(Debug, Clone)]
pub struct FederationOutput {
    pub records: Vec<RoundRecord>,
    pub final_state: PeftState,
    pub final_eval: Evaluation,
    pub z: Option<f64>,
    pub sigma: f64,
    pub privacy: Option<PrivacyConfig>,
    /// `(ε, optimal order)` over all executed rounds.
    pub epsilon_spent: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
struct ResolvedPrivacy {
    config: PrivacyConfig,
    z: f64,
    sigma: f64,
}

/// A configured federated experiment over fixed client shards.
#[derive(Debug, Clone)]
pub struct Federation {
    base: Arc<FrozenBase>,
    shards: Vec<ClientShard>,
    test: Dataset,
    method: PeftMethod,
    config: FederationConfig,
    privacy: Option<ResolvedPrivacy>,
    codec: FixedPointCodec,
    source: RandomSource,
}

impl Federation {
    /// Validates the setup and, for private algorithms, calibrates `z`.
    pub fn new(
        base: Arc<FrozenBase>,
        shards: Vec<ClientShard>,
        test: Dataset,
        method: PeftMethod,
        config: FederationConfig,
        privacy: Option<&PrivacySettings>,
        source: RandomSource,
    ) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::config("data.partition.clients", "at least one client is required"));
        }
        method.validate()?;
        config.validate(&method, shards.len())?;
        if let Some(s) = shards.iter().find(|s| s.data.dim() != base.input_dim()) {
            return Err(Error::Shape {
                op: "client features",
                left: (s.n_k(), s.data.dim()),
                right: (s.n_k(), base.input_dim()),
            });
        }
        let privacy = if config.algorithm.is_private() {
            let settings = privacy.ok_or_else(|| {
                Error::config("privacy", "a [privacy] section is required for private algorithms")
            })?;
            let resolved = settings.resolve(config.rounds, config.expected_cohort(shards.len()));
            resolved.validate()?;
            let z = match settings.noise_multiplier {
                Some(z) if z >= 0.0 && z.is_finite() => z,
                Some(_) => return Err(Error::config("privacy.noise_multiplier", "must be finite and >= 0")),
                None => calibrate(resolved.epsilon, resolved.delta, resolved.q, resolved.rounds)?,
            };
            let sigma = effective_sigma(&resolved, z);
            Some(ResolvedPrivacy {
                config: resolved,
                z,
                sigma,
            })
        } else {
            if privacy.is_some() {
                log::warn!("ignoring [privacy] for non-private algorithm fedavg");
            }
            None
        };
        Ok(Self {
            base,
            shards,
            test,
            method,
            config,
            privacy,
            codec: FixedPointCodec::default(),
            source,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn base(&self) -> &Arc<FrozenBase> {
        &self.base
    }

    pub fn clients(&self) -> usize {
        self.shards.len()
    }

    pub fn z(&self) -> Option<f64> {
        self.privacy.as_ref().map(|p| p.z)
    }

    pub fn sigma(&self) -> f64 {
        self.privacy.as_ref().map_or(0.0, |p| p.sigma)
    }

    pub fn privacy_config(&self) -> Option<&PrivacyConfig> {
        self.privacy.as_ref().map(|p| &p.config)
    }

    fn clip_norm(&self) -> Option<f64> {
        match &self.privacy {
            Some(p) => Some(p.config.clip_norm),
            None => self.config.clip_norm,
        }
    }

    /// Initial global trainable state.
    pub fn init_state(&self) -> Result<PeftState> {
        self.base.init_peft(self.method, &mut self.source.derive(&[purpose::PEFT_INIT]))
    }

    /// Stream for everything random in round `t`.
    pub fn round_source(&self, t: usize) -> RandomSource {
        self.source.derive(&[t as u64])
    }

    /// Stream client `k` trains with in a round.
    pub fn client_source(round: &RandomSource, k: usize) -> RandomSource {
        round.derive(&[purpose::LOCAL_TRAIN, k as u64])
    }

    pub fn evaluate(&self, state: &PeftState) -> Result<Evaluation> {
        let snap = ModelSnapshot::new(self.base.clone(), state.clone());
        match self.method.rank_range() {
            Some((lo, hi)) => {
                let rank_accuracy = (lo..=hi)
                    .map(|b| Ok((b, snap.evaluate(&self.test, Some(b))?)))
                    .collect::<Result<Vec<_>>>()?;
                let (best_rank, accuracy) = rank_accuracy
                    .iter()
                    .copied()
                    .fold((lo, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
                Ok(Evaluation {
                    accuracy,
                    best_rank: Some(best_rank),
                    rank_accuracy,
                })
            }
            None => Ok(Evaluation {
                accuracy: snap.evaluate(&self.test, None)?,
                best_rank: None,
                rank_accuracy: Vec::new(),
            }),
        }
    }

    /// Round `t` using the experiment's own round stream.
    pub fn run_round(&self, state: &PeftState, t: usize) -> Result<(PeftState, RoundRecord)> {
        self.run_round_with(state, t, &self.round_source(t))
    }

    /// One round of training driven by the given round stream.
    ///
    /// With DyLoRA and server-side rank sampling only the coordinates of the
    /// `b`-truncated factors are transmitted, clipped, noised and averaged;
    /// every other coordinate of the global state is left unchanged.
    pub fn run_round_with(&self, state: &PeftState, t: usize, round: &RandomSource) -> Result<(PeftState, RoundRecord)> {
        let started = Instant::now();
        let cohort = sample_cohort(
            self.shards.len(),
            self.config.cohort,
            self.config.q,
            self.config.cohort_size,
            &mut round.derive(&[purpose::COHORT]),
        )?;

        let (server_rank, client_ranks) = match self.method.rank_range() {
            None => (None, Vec::new()),
            Some((lo, hi)) => match self.config.rank_sampling {
                RankSampling::Server => {
                    let b = round.derive(&[purpose::RANK]).uniform_usize(lo, hi);
                    (Some(b), vec![b; cohort.len()])
                }
                RankSampling::PerClient => (
                    None,
                    cohort
                        .iter()
                        .map(|&k| round.derive(&[purpose::RANK, k as u64]).uniform_usize(lo, hi))
                        .collect(),
                ),
            },
        };

        let mut record = RoundRecord {
            round: t,
            rank: server_rank,
            client_ranks: client_ranks.clone(),
            cohort: cohort.clone(),
            norm_min: None,
            norm_median: None,
            norm_max: None,
            sigma: self.sigma(),
            eval: None,
            skipped: cohort.is_empty(),
            wall_time_ms: 0.0,
        };
        if cohort.is_empty() {
            record.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
            return Ok((state.clone(), record));
        }

        let snapshot = ModelSnapshot {
            base: self.base.clone(),
            peft: state.clone(),
            round: t,
        };
        let sgd = self.config.sgd();
        let updates = cohort
            .par_iter()
            .enumerate()
            .map(|(pos, &k)| {
                let rank = client_ranks.get(pos).copied();
                local_sgd(&snapshot, &self.shards[k].data, &sgd, rank, &Self::client_source(round, k)).map(|u| u.delta)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut norms: Vec<f64> = updates.iter().map(|u| l2_norm(u)).collect();
        norms.sort_by(f64::total_cmp);
        let n = norms.len();
        record.norm_min = Some(norms[0]);
        record.norm_max = Some(norms[n - 1]);
        record.norm_median = Some(if n % 2 == 1 {
            norms[n / 2]
        } else {
            0.5 * (norms[n / 2 - 1] + norms[n / 2])
        });

        let transmitted: Vec<usize> = state
            .coordinate_mask(server_rank)
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect();
        let compact: Vec<Vec<f64>> = updates.iter().map(|u| transmitted.iter().map(|&i| u[i]).collect()).collect();
        let params = SecureSumParams {
            clip_norm: self.clip_norm(),
            sigma: self.sigma(),
            aggregation: self.config.aggregation,
            noise_mode: self.config.noise_mode,
            codec: self.codec,
        };
        let sum = secure_sum_dp(&compact, &params, round)?;
        let mut averaged = vec![0.0; state.param_count()];
        let scale = 1.0 / cohort.len() as f64;
        for (&i, s) in transmitted.iter().zip(&sum) {
            averaged[i] = s * scale;
        }
        let mut next = state.clone();
        next.apply_update(1.0, &averaged)?;

        if let PeftMethod::AdaLora {
            target_rank,
            prune_interval,
            ..
        } = self.method
        {
            if (t + 1) % prune_interval == 0 {
                next = adalora_prune(&next, &singular_value_magnitudes(&next), target_rank)?;
            }
        }
        record.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok((next, record))
    }

    /// Runs every round, evaluating every `eval_interval` rounds and after the last.
    pub fn run(&self) -> Result<FederationOutput> {
        let mut state = self.init_state()?;
        let mut records = Vec::with_capacity(self.config.rounds);
        let mut final_eval = None;
        for t in 0..self.config.rounds {
            let (next, mut record) = self.run_round(&state, t)?;
            state = next;
            let last = t + 1 == self.config.rounds;
            if (t + 1) % self.config.eval_interval == 0 || last {
                let eval = self.evaluate(&state)?;
                log::info!("round {}: accuracy {:.4}", t + 1, eval.accuracy);
                if last {
                    final_eval = Some(eval.clone());
                }
                record.eval = Some(eval);
            }
            records.push(record);
        }
        let epsilon_spent = match &self.privacy {
            Some(p) => Some(p.config.spent(p.z, self.config.rounds)?),
            None => None,
        };
        Ok(FederationOutput {
            records,
            final_state: state,
            final_eval: final_eval.expect("at least one round ran"),
            z: self.z(),
            sigma: self.sigma(),
            privacy: self.privacy_config().cloned(),
            epsilon_spent,
        })
    }
}
