//! Parameter-efficient fine-tuning strategies over frozen dense layers.
//!
//! Each strategy owns a set of trainable tensors per layer ([`LayerParams`])
//! and contributes a delta to the layer's forward pass. The full set of
//! trainable tensors is a [`PeftState`], which flattens to the update vector
//! that clients send to the server.

mod layer;
mod method;
mod state;

pub use layer::{layer_backward, layer_forward, LayerCache};
pub use method::PeftMethod;
pub use state::{
    adalora_prune, init_peft, singular_value_magnitudes, truncate_dylora, LayerParams, PeftState, INIT_STD,
};

use crate::error::Result;
use crate::numerics::Matrix;

/// Output of layer `index` (frozen affine map plus the method's delta) on
/// the `in × batch` input `x`.
pub fn peft_forward(
    state: &PeftState,
    index: usize,
    weight: &Matrix,
    bias: &[f64],
    x: &Matrix,
    rank: Option<usize>,
) -> Result<Matrix> {
    Ok(layer_forward(state, index, weight, bias, x, rank)?.0)
}

/// Gradients of a loss with respect to the trainable tensors of layer
/// `index`, given `upstream = dL/dz`. Returned in the layout of `state`
/// with every other layer zero.
pub fn peft_gradients(
    state: &PeftState,
    index: usize,
    weight: &Matrix,
    bias: &[f64],
    x: &Matrix,
    upstream: &Matrix,
    rank: Option<usize>,
) -> Result<PeftState> {
    let (_, cache) = layer_forward(state, index, weight, bias, x, rank)?;
    let mut grads = state.zeros_like();
    layer_backward(state, index, weight, &cache, upstream, &mut grads)?;
    Ok(grads)
}
