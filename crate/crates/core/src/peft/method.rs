use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A parameter-efficient fine-tuning strategy and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PeftMethod {
    /// Every weight and bias is trainable (stored as a delta over the frozen base).
    Full,
    /// Sequential bottleneck `U·relu(D·h + d) + u + h` after each layer.
    Adapter { rank: usize },
    /// Sum of `n` Kronecker products `A_i ⊗ (s_i t_i)` with `A_i` shared across layers.
    Compacter { n: usize, rank: usize },
    /// Only bias vectors are trainable.
    #[serde(rename = "bitfit")]
    BitFit,
    Lora { rank: usize },
    #[serde(rename = "loha")]
    LoHa { rank: usize },
    #[serde(rename = "adalora")]
    AdaLora {
        rank: usize,
        target_rank: usize,
        prune_interval: usize,
    },
    #[serde(rename = "dylora")]
    DyLora { r_min: usize, r_max: usize },
}

impl PeftMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PeftMethod::Full => "full",
            PeftMethod::Adapter { .. } => "adapter",
            PeftMethod::Compacter { .. } => "compacter",
            PeftMethod::BitFit => "bitfit",
            PeftMethod::Lora { .. } => "lora",
            PeftMethod::LoHa { .. } => "loha",
            PeftMethod::AdaLora { .. } => "adalora",
            PeftMethod::DyLora { .. } => "dylora",
        }
    }

    pub fn is_dylora(&self) -> bool {
        matches!(self, PeftMethod::DyLora { .. })
    }

    /// Inclusive rank range for DyLoRA.
    pub fn rank_range(&self) -> Option<(usize, usize)> {
        match *self {
            PeftMethod::DyLora { r_min, r_max } => Some((r_min, r_max)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("method.{field}"), msg));
        match *self {
            PeftMethod::Full | PeftMethod::BitFit => Ok(()),
            PeftMethod::Adapter { rank } | PeftMethod::Lora { rank } | PeftMethod::LoHa { rank } => {
                if rank == 0 {
                    return bad("rank", "rank must be >= 1".into());
                }
                Ok(())
            }
            PeftMethod::Compacter { n, rank } => {
                if n == 0 {
                    return bad("n", "n must be >= 1".into());
                }
                if rank == 0 {
                    return bad("rank", "rank must be >= 1".into());
                }
                Ok(())
            }
            PeftMethod::AdaLora {
                rank,
                target_rank,
                prune_interval,
            } => {
                if rank == 0 {
                    return bad("rank", "rank must be >= 1".into());
                }
                if target_rank == 0 || target_rank > rank {
                    return bad("target_rank", format!("target_rank must be in 1..={rank}"));
                }
                if prune_interval == 0 {
                    return bad("prune_interval", "prune_interval must be >= 1".into());
                }
                Ok(())
            }
            PeftMethod::DyLora { r_min, r_max } => {
                if r_min == 0 {
                    return bad("r_min", "r_min must be >= 1".into());
                }
                if r_min > r_max {
                    return bad("r_max", format!("r_max ({r_max}) must be >= r_min ({r_min})"));
                }
                Ok(())
            }
        }
    }

    /// Checks a per-call rank override against the method.
    pub fn check_rank(&self, rank: Option<usize>) -> Result<()> {
        match (self, rank) {
            (_, None) => Ok(()),
            (PeftMethod::DyLora { r_min, r_max }, Some(b)) => {
                if b < *r_min || b > *r_max {
                    Err(Error::param(format!("rank {b} outside [{r_min}, {r_max}]")))
                } else {
                    Ok(())
                }
            }
            (m, Some(_)) => Err(Error::param(format!("rank override is only valid for dylora, not {}", m.name()))),
        }
    }

    /// Closed-form trainable parameter count for one `out × in` layer,
    /// excluding parameters shared across layers (Compacter's `A_i`).
    pub fn layer_param_count(&self, out_dim: usize, in_dim: usize) -> usize {
        match *self {
            PeftMethod::Full => out_dim * in_dim + out_dim,
            PeftMethod::BitFit => out_dim,
            PeftMethod::Adapter { rank } => 2 * rank * out_dim + rank + out_dim,
            PeftMethod::Compacter { n, rank } => n * rank * (out_dim / n + in_dim / n) + out_dim,
            PeftMethod::Lora { rank } => rank * (out_dim + in_dim),
            PeftMethod::LoHa { rank } => 2 * rank * (out_dim + in_dim),
            PeftMethod::AdaLora { rank, .. } => rank * (out_dim + in_dim) + rank,
            PeftMethod::DyLora { r_max, .. } => r_max * (out_dim + in_dim),
        }
    }

    pub fn shared_param_count(&self) -> usize {
        match *self {
            PeftMethod::Compacter { n, .. } => n * n * n,
            _ => 0,
        }
    }
}
