use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};
use crate::peft::PeftMethod;

/// Standard deviation of the Gaussian-initialised adapter factors.
pub const INIT_STD: f64 = 0.02;

/// Trainable tensors attached to one frozen layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    /// Deltas over the frozen weight and bias.
    Full { weight: Matrix, bias: Vec<f64> },
    /// `down`: r × k, `up`: k × r, where k is the layer's output width.
    Adapter {
        down: Matrix,
        down_bias: Vec<f64>,
        up: Matrix,
        up_bias: Vec<f64>,
    },
    /// Per-layer low-rank factors `s_i` ((out/n) × r) and `t_i` (r × (in/n)).
    Compacter { s: Vec<Matrix>, t: Vec<Matrix>, bias: Vec<f64> },
    /// Replaces the frozen bias.
    BitFit { bias: Vec<f64> },
    /// `b`: out × r up-projection, `a`: r × in down-projection. Used by LoRA and DyLoRA.
    Lora { b: Matrix, a: Matrix },
    LoHa { b1: Matrix, a1: Matrix, b2: Matrix, a2: Matrix },
    /// `b · diag(lambda) · a`; `active[k] == false` marks a pruned singular value.
    AdaLora {
        b: Matrix,
        lambda: Vec<f64>,
        a: Matrix,
        active: Vec<bool>,
    },
}

impl LayerParams {
    fn slices(&self) -> Vec<&[f64]> {
        match self {
            LayerParams::Full { weight, bias } => vec![weight.as_slice(), bias],
            LayerParams::Adapter {
                down,
                down_bias,
                up,
                up_bias,
            } => vec![down.as_slice(), down_bias, up.as_slice(), up_bias],
            LayerParams::Compacter { s, t, bias } => {
                let mut out: Vec<&[f64]> = Vec::with_capacity(s.len() * 2 + 1);
                for (si, ti) in s.iter().zip(t) {
                    out.push(si.as_slice());
                    out.push(ti.as_slice());
                }
                out.push(bias);
                out
            }
            LayerParams::BitFit { bias } => vec![bias],
            LayerParams::Lora { b, a } => vec![b.as_slice(), a.as_slice()],
            LayerParams::LoHa { b1, a1, b2, a2 } => {
                vec![b1.as_slice(), a1.as_slice(), b2.as_slice(), a2.as_slice()]
            }
            LayerParams::AdaLora { b, lambda, a, .. } => vec![b.as_slice(), lambda, a.as_slice()],
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerParams::Full { weight, bias } => vec![weight.as_mut_slice(), bias],
            LayerParams::Adapter {
                down,
                down_bias,
                up,
                up_bias,
            } => vec![down.as_mut_slice(), down_bias, up.as_mut_slice(), up_bias],
            LayerParams::Compacter { s, t, bias } => {
                let mut out: Vec<&mut [f64]> = Vec::with_capacity(s.len() * 2 + 1);
                for (si, ti) in s.iter_mut().zip(t.iter_mut()) {
                    out.push(si.as_mut_slice());
                    out.push(ti.as_mut_slice());
                }
                out.push(bias);
                out
            }
            LayerParams::BitFit { bias } => vec![bias],
            LayerParams::Lora { b, a } => vec![b.as_mut_slice(), a.as_mut_slice()],
            LayerParams::LoHa { b1, a1, b2, a2 } => vec![
                b1.as_mut_slice(),
                a1.as_mut_slice(),
                b2.as_mut_slice(),
                a2.as_mut_slice(),
            ],
            LayerParams::AdaLora { b, lambda, a, .. } => vec![b.as_mut_slice(), lambda, a.as_mut_slice()],
        }
    }

    /// Marks which flat coordinates of this layer are trainable under an
    /// optional DyLoRA rank.
    fn push_mask(&self, rank: Option<usize>, mask: &mut Vec<bool>) {
        match self {
            LayerParams::Lora { b, a } => {
                let keep = rank.unwrap_or(b.cols());
                for _ in 0..b.rows() {
                    mask.extend((0..b.cols()).map(|c| c < keep));
                }
                for r in 0..a.rows() {
                    mask.extend(std::iter::repeat_n(r < keep, a.cols()));
                }
            }
            LayerParams::AdaLora { b, a, active, .. } => {
                for _ in 0..b.rows() {
                    mask.extend(active.iter().copied());
                }
                mask.extend(active.iter().copied());
                for &on in active.iter().take(a.rows()) {
                    mask.extend(std::iter::repeat_n(on, a.cols()));
                }
            }
            other => {
                let n: usize = other.slices().iter().map(|s| s.len()).sum();
                mask.extend(std::iter::repeat_n(true, n));
            }
        }
    }

    fn zeros_like(&self) -> LayerParams {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }
}

/// Trainable parameters of one PEFT method over every frozen layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeftState {
    method: PeftMethod,
    /// Compacter's shared `A_1..A_n` (n × n); empty for other methods.
    shared: Vec<Matrix>,
    layers: Vec<LayerParams>,
}

impl PeftState {
    pub fn method(&self) -> &PeftMethod {
        &self.method
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn shared(&self) -> &[Matrix] {
        &self.shared
    }

    pub fn shared_mut(&mut self) -> &mut [Matrix] {
        &mut self.shared
    }

    #[cfg(test)]
    pub(crate) fn from_parts(method: PeftMethod, shared: Vec<Matrix>, layers: Vec<LayerParams>) -> Self {
        Self { method, shared, layers }
    }

    /// Total trainable parameter count (length of [`PeftState::flatten`]).
    pub fn param_count(&self) -> usize {
        self.shared.iter().map(Matrix::len).sum::<usize>()
            + self
                .layers
                .iter()
                .flat_map(|l| l.slices())
                .map(<[f64]>::len)
                .sum::<usize>()
    }

    /// Concatenates every trainable tensor: shared tensors first, then each
    /// layer's tensors in declaration order, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in &self.shared {
            out.extend_from_slice(m.as_slice());
        }
        for l in &self.layers {
            for s in l.slices() {
                out.extend_from_slice(s);
            }
        }
        out
    }

    /// Inverse of [`PeftState::flatten`], using `self` as the shape template.
    pub fn unflatten(&self, flat: &[f64]) -> Result<PeftState> {
        let mut out = self.clone();
        out.assign_flat(flat)?;
        Ok(out)
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::param(format!(
                "flat vector has {} entries, state has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for m in &mut self.shared {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        for l in &mut self.layers {
            for s in l.slices_mut() {
                let n = s.len();
                s.copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    /// Adds `alpha * delta` to every coordinate where the trainable mask is
    /// set; masked-out coordinates (pruned AdaLoRA slices) stay untouched.
    pub fn apply_update(&mut self, alpha: f64, delta: &[f64]) -> Result<()> {
        let mask = self.coordinate_mask(None);
        let mut flat = self.flatten();
        if delta.len() != flat.len() {
            return Err(Error::param(format!(
                "update has {} entries, state has {}",
                delta.len(),
                flat.len()
            )));
        }
        for ((p, d), on) in flat.iter_mut().zip(delta).zip(mask) {
            if on {
                *p += alpha * d;
            }
        }
        self.assign_flat(&flat)
    }

    /// Per-coordinate trainability under an optional DyLoRA rank: coordinates
    /// outside the `rank`-truncated factors, and pruned AdaLoRA slices, are `false`.
    pub fn coordinate_mask(&self, rank: Option<usize>) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.param_count());
        for m in &self.shared {
            mask.extend(std::iter::repeat_n(true, m.len()));
        }
        for l in &self.layers {
            l.push_mask(rank, &mut mask);
        }
        mask
    }

    pub fn zeros_like(&self) -> PeftState {
        PeftState {
            method: self.method,
            shared: self.shared.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }
}

/// Creates the trainable state for `method` over layers of shape
/// `(out, in)` with frozen biases `biases` (needed by BitFit).
///
/// Low-rank factors follow the zero-product convention: the up-projection
/// `B` is Gaussian and the down-projection `A` is zero, so every LoRA-family
/// delta starts at exactly zero. Adapter and Compacter start with a zero
/// up-projection so only the frozen path contributes.
pub fn init_peft(
    method: PeftMethod,
    layer_shapes: &[(usize, usize)],
    biases: &[Vec<f64>],
    source: &mut RandomSource,
) -> Result<PeftState> {
    method.validate()?;
    if biases.len() != layer_shapes.len() {
        return Err(Error::param("one bias vector per layer is required"));
    }
    let mut shared = Vec::new();
    if let PeftMethod::Compacter { n, .. } = method {
        for (i, &(out, inp)) in layer_shapes.iter().enumerate() {
            if out % n != 0 || inp % n != 0 {
                return Err(Error::config(
                    "method.n",
                    format!("n = {n} must divide both dimensions of layer {i} ({out} x {inp})"),
                ));
            }
        }
        shared = (0..n).map(|_| source.gaussian_matrix(n, n, 1.0)).collect();
    }

    let mut layers = Vec::with_capacity(layer_shapes.len());
    for (&(out, inp), bias) in layer_shapes.iter().zip(biases) {
        if bias.len() != out {
            return Err(Error::param(format!("bias of length {} for a layer with {out} outputs", bias.len())));
        }
        let params = match method {
            PeftMethod::Full => LayerParams::Full {
                weight: Matrix::zeros(out, inp),
                bias: vec![0.0; out],
            },
            PeftMethod::BitFit => LayerParams::BitFit { bias: bias.clone() },
            PeftMethod::Adapter { rank } => LayerParams::Adapter {
                down: source.gaussian_matrix(rank, out, INIT_STD),
                down_bias: vec![0.0; rank],
                up: Matrix::zeros(out, rank),
                up_bias: vec![0.0; out],
            },
            PeftMethod::Compacter { n, rank } => LayerParams::Compacter {
                s: (0..n).map(|_| Matrix::zeros(out / n, rank)).collect(),
                t: (0..n).map(|_| source.gaussian_matrix(rank, inp / n, INIT_STD)).collect(),
                bias: vec![0.0; out],
            },
            PeftMethod::Lora { rank } | PeftMethod::DyLora { r_max: rank, .. } => LayerParams::Lora {
                b: source.gaussian_matrix(out, rank, INIT_STD),
                a: Matrix::zeros(rank, inp),
            },
            PeftMethod::LoHa { rank } => {
                // the first Hadamard factor needs O(1) entries or the whole
                // product (and its gradient) starts vanishingly small
                let wide = 1.0 / (rank as f64).sqrt();
                LayerParams::LoHa {
                    b1: source.gaussian_matrix(out, rank, wide),
                    a1: source.gaussian_matrix(rank, inp, wide),
                    b2: source.gaussian_matrix(out, rank, INIT_STD),
                    a2: Matrix::zeros(rank, inp),
                }
            }
            PeftMethod::AdaLora { rank, .. } => LayerParams::AdaLora {
                b: source.gaussian_matrix(out, rank, INIT_STD),
                lambda: vec![1.0; rank],
                a: Matrix::zeros(rank, inp),
                active: vec![true; rank],
            },
        };
        layers.push(params);
    }
    Ok(PeftState { method, shared, layers })
}

/// The `b`-truncated DyLoRA factors of every layer: the first `b` columns of
/// `B` and the first `b` rows of `A`.
pub fn truncate_dylora(state: &PeftState, b: usize) -> Result<Vec<(Matrix, Matrix)>> {
    if !state.method.is_dylora() {
        return Err(Error::param(format!("truncation requires dylora, not {}", state.method.name())));
    }
    state.method.check_rank(Some(b))?;
    Ok(state
        .layers
        .iter()
        .map(|l| match l {
            LayerParams::Lora { b: up, a: down } => (up.leading_cols(b), down.leading_rows(b)),
            _ => unreachable!("dylora layers are always low-rank pairs"),
        })
        .collect())
}

/// `|λ|` per AdaLoRA layer (zeros for pruned entries).
pub fn singular_value_magnitudes(state: &PeftState) -> Vec<Vec<f64>> {
    state
        .layers
        .iter()
        .map(|l| match l {
            LayerParams::AdaLora { lambda, active, .. } => lambda
                .iter()
                .zip(active)
                .map(|(v, &on)| if on { v.abs() } else { 0.0 })
                .collect(),
            _ => Vec::new(),
        })
        .collect()
}

/// Zeroes the least important singular values of every AdaLoRA layer until
/// at most `target_rank` remain active. Pruned entries are frozen from then on.
pub fn adalora_prune(state: &PeftState, importance: &[Vec<f64>], target_rank: usize) -> Result<PeftState> {
    if !matches!(state.method, PeftMethod::AdaLora { .. }) {
        return Err(Error::param(format!("pruning requires adalora, not {}", state.method.name())));
    }
    if importance.len() != state.layers.len() {
        return Err(Error::param("one importance vector per layer is required"));
    }
    let mut out = state.clone();
    for (layer, scores) in out.layers.iter_mut().zip(importance) {
        let LayerParams::AdaLora { lambda, active, .. } = layer else {
            unreachable!("adalora state holds adalora layers")
        };
        if scores.len() != lambda.len() {
            return Err(Error::param("importance length does not match rank"));
        }
        let mut order: Vec<usize> = (0..lambda.len()).filter(|&k| active[k]).collect();
        // smallest first; later index loses ties
        order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(j.cmp(&i)));
        let excess = order.len().saturating_sub(target_rank);
        for &k in order.iter().take(excess) {
            active[k] = false;
            lambda[k] = 0.0;
        }
    }
    Ok(out)
}
