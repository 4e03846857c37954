//! Frozen MLP classifier hosting a PEFT strategy on every dense layer.

use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{purpose, Matrix, RandomSource};
use crate::peft::{init_peft, layer_backward, layer_forward, LayerCache, LayerParams, PeftMethod, PeftState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenLayer {
    /// out × in
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Pre-trained weights. Nothing in the simulator mutates a base once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenBase {
    layers: Vec<FrozenLayer>,
}

impl FrozenBase {
    pub fn new(layers: Vec<FrozenLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("a base needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(Error::param(format!("layer {i}: bias length does not match output width")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weight.cols() != l.weight.rows() {
                    return Err(Error::Shape {
                        op: "layer chain",
                        left: l.weight.shape(),
                        right: next.weight.shape(),
                    });
                }
            }
        }
        Ok(Self { layers })
    }

    /// He-initialised MLP `input_dim → hidden… → classes`, ReLU between
    /// layers and no activation on the logits.
    pub fn random(input_dim: usize, hidden: &[usize], classes: usize, source: &mut RandomSource) -> Result<Self> {
        if input_dim == 0 || classes < 2 || hidden.contains(&0) {
            return Err(Error::param("layer widths must be positive and classes >= 2"));
        }
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect();
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| FrozenLayer {
                weight: source.gaussian_matrix(w[1], w[0], (2.0 / w[0] as f64).sqrt()),
                bias: vec![0.0; w[1]],
                activation: if i + 2 == widths.len() {
                    Activation::None
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[FrozenLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    /// `(out, in)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weight.shape()).collect()
    }

    pub fn biases(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.bias.clone()).collect()
    }

    /// Hash over the exact bit patterns of every weight and bias.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for l in &self.layers {
            l.weight.shape().hash(&mut h);
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Frozen-only logits on a `dim × batch` input.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = l.weight.matmul(&h)?;
            z.add_column_broadcast(&l.bias)?;
            h = activate(&z, l.activation);
        }
        Ok(h)
    }

    /// A new base with a full fine-tuning delta folded into the weights.
    pub fn merged_with(&self, full: &PeftState) -> Result<FrozenBase> {
        if !matches!(full.method(), PeftMethod::Full) {
            return Err(Error::param("only a full fine-tuning state can be merged"));
        }
        let layers = self
            .layers
            .iter()
            .zip(full.layers())
            .map(|(l, p)| match p {
                LayerParams::Full { weight, bias } => Ok(FrozenLayer {
                    weight: l.weight.add(weight)?,
                    bias: l.bias.iter().zip(bias).map(|(a, b)| a + b).collect(),
                    activation: l.activation,
                }),
                _ => unreachable!("full state holds full layers"),
            })
            .collect::<Result<Vec<_>>>()?;
        FrozenBase::new(layers)
    }

    pub fn init_peft(&self, method: PeftMethod, source: &mut RandomSource) -> Result<PeftState> {
        init_peft(method, &self.layer_shapes(), &self.biases(), source)
    }
}

fn activate(z: &Matrix, act: Activation) -> Matrix {
    match act {
        Activation::Relu => z.map(|v| v.max(0.0)),
        Activation::None => z.clone(),
    }
}

/// The global model at the start of a round: shared frozen base plus trainable state.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    pub base: Arc<FrozenBase>,
    pub peft: PeftState,
    pub round: usize,
}

impl ModelSnapshot {
    pub fn new(base: Arc<FrozenBase>, peft: PeftState) -> Self {
        Self { base, peft, round: 0 }
    }

    fn check_input(&self, x: &Matrix, y: &[usize]) -> Result<()> {
        if x.rows() != self.base.input_dim() {
            return Err(Error::Shape {
                op: "model input",
                left: x.shape(),
                right: (self.base.input_dim(), x.cols()),
            });
        }
        if x.cols() != y.len() {
            return Err(Error::param(format!("{} samples but {} labels", x.cols(), y.len())));
        }
        let classes = self.base.classes();
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::param(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(())
    }

    /// Logits (`classes × batch`) with the PEFT deltas applied.
    pub fn logits(&self, x: &Matrix, rank: Option<usize>) -> Result<Matrix> {
        Ok(self.forward_cached(x, rank)?.0)
    }

    fn forward_cached(&self, x: &Matrix, rank: Option<usize>) -> Result<(Matrix, Vec<(LayerCache, Matrix)>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.base.layers.len());
        for (i, l) in self.base.layers.iter().enumerate() {
            let (z, cache) = layer_forward(&self.peft, i, &l.weight, &l.bias, &h, rank)?;
            h = activate(&z, l.activation);
            caches.push((cache, z));
        }
        Ok((h, caches))
    }

    pub fn predict(&self, x: &Matrix, rank: Option<usize>) -> Result<Vec<usize>> {
        let logits = self.logits(x, rank)?;
        Ok((0..logits.cols())
            .map(|j| {
                (0..logits.rows())
                    .max_by(|&a, &b| logits.get(a, j).total_cmp(&logits.get(b, j)).then(b.cmp(&a)))
                    .unwrap_or(0)
            })
            .collect())
    }

    /// Accuracy on a dataset.
    pub fn evaluate(&self, data: &Dataset, rank: Option<usize>) -> Result<f64> {
        let (x, y) = data.as_batch();
        crate::data::accuracy(&self.predict(&x, rank)?, &y)
    }

    /// Gradient of the mean cross-entropy with respect to the flattened trainable state.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[usize], rank: Option<usize>) -> Result<(f64, Vec<f64>)> {
        self.check_input(x, y)?;
        let (logits, caches) = self.forward_cached(x, rank)?;
        let probs = softmax_columns(&logits);
        let batch = y.len() as f64;
        let loss = cross_entropy(&logits, y);

        let mut g = probs;
        for (j, &label) in y.iter().enumerate() {
            g.set(label, j, g.get(label, j) - 1.0);
        }
        let mut g = g.scale(1.0 / batch);

        let mut grads = self.peft.zeros_like();
        for (i, l) in self.base.layers.iter().enumerate().rev() {
            let (cache, z) = &caches[i];
            if l.activation == Activation::Relu {
                for (gv, &zv) in g.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            g = layer_backward(&self.peft, i, &l.weight, cache, &g, &mut grads)?;
        }
        Ok((loss, grads.flatten()))
    }
}

/// Column-wise softmax of a `classes × batch` matrix.
pub fn softmax_columns(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for j in 0..logits.cols() {
        let max = (0..logits.rows()).map(|i| logits.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = (0..logits.rows()).map(|i| (logits.get(i, j) - max).exp()).sum();
        for i in 0..logits.rows() {
            out.set(i, j, (logits.get(i, j) - max).exp() / total);
        }
    }
    out
}

/// Mean cross-entropy, computed with log-sum-exp.
fn cross_entropy(logits: &Matrix, y: &[usize]) -> f64 {
    let mut total = 0.0;
    for (j, &label) in y.iter().enumerate() {
        let max = (0..logits.rows()).map(|i| logits.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..logits.rows()).map(|i| (logits.get(i, j) - max).exp()).sum::<f64>().ln();
        total += lse - logits.get(label, j);
    }
    (total / y.len() as f64).max(0.0)
}

/// Mean cross-entropy loss and logits on a batch.
pub fn forward_loss(snapshot: &ModelSnapshot, x: &Matrix, y: &[usize], rank: Option<usize>) -> Result<(f64, Matrix)> {
    snapshot.check_input(x, y)?;
    let logits = snapshot.logits(x, rank)?;
    Ok((cross_entropy(&logits, y), logits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl SgdParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("federation.local_epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("federation.batch_size", "must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("federation.learning_rate", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Result of local training on one client.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    /// `flatten(trained) − flatten(start)`.
    pub delta: Vec<f64>,
    pub steps: usize,
    /// The client had no data, so `delta` is all zeros.
    pub empty: bool,
}

/// Plain minibatch SGD on the trainable state, starting from `snapshot`.
/// Batches are a fresh seeded shuffle each epoch.
pub fn local_sgd(
    snapshot: &ModelSnapshot,
    data: &Dataset,
    params: &SgdParams,
    rank: Option<usize>,
    source: &RandomSource,
) -> Result<LocalUpdate> {
    params.validate()?;
    snapshot.peft.method().check_rank(rank)?;
    let start = snapshot.peft.flatten();
    if data.is_empty() {
        return Ok(LocalUpdate {
            delta: vec![0.0; start.len()],
            steps: 0,
            empty: true,
        });
    }
    let mut model = snapshot.clone();
    let mut steps = 0;
    for epoch in 0..params.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        source.derive(&[epoch as u64]).shuffle(&mut order);
        for chunk in order.chunks(params.batch_size) {
            let (x, y) = data.batch(chunk);
            let (_, grad) = model.loss_and_gradient(&x, &y, rank)?;
            model.peft.apply_update(-params.learning_rate, &grad)?;
            steps += 1;
        }
    }
    let delta = model.peft.flatten().iter().zip(&start).map(|(a, b)| a - b).collect();
    Ok(LocalUpdate {
        delta,
        steps,
        empty: false,
    })
}

/// Trains a randomly initialised base on `data` with plain SGD over every
/// weight, then freezes it.
pub fn pretrain_base(
    data: &Dataset,
    hidden: &[usize],
    params: &SgdParams,
    source: &RandomSource,
) -> Result<FrozenBase> {
    if data.is_empty() {
        return Err(Error::Empty("pretraining data"));
    }
    let base = FrozenBase::random(data.dim(), hidden, data.classes(), &mut source.derive(&[purpose::BASE_INIT]))?;
    if params.epochs == 0 {
        return Ok(base);
    }
    let base = Arc::new(base);
    let full = base.init_peft(PeftMethod::Full, &mut source.derive(&[purpose::PEFT_INIT]))?;
    let snapshot = ModelSnapshot::new(base.clone(), full);
    let update = local_sgd(&snapshot, data, params, None, &source.derive(&[purpose::PRETRAIN]))?;
    let mut trained = snapshot.peft;
    trained.apply_update(1.0, &update.delta)?;
    base.merged_with(&trained)
}

/// Same as [`pretrain_base`] but checks the base's input width against `input_dim`.
pub fn pretrain_base_for(
    data: &Dataset,
    input_dim: usize,
    hidden: &[usize],
    params: &SgdParams,
    source: &RandomSource,
) -> Result<FrozenBase> {
    if data.dim() != input_dim {
        return Err(Error::Shape {
            op: "pretraining features",
            left: (data.len(), data.dim()),
            right: (data.len(), input_dim),
        });
    }
    pretrain_base(data, hidden, params, source)
}
