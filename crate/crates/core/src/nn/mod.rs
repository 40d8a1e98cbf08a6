//! Transformer layers with hand-derived backward passes.
//!
//! Every layer is a pair of free functions: a forward pass returning its
//! output plus a cache of intermediates, and a backward pass consuming the
//! cache. All math is `f64`; activations are `[seq_len x features]` matrices.

mod attention;
mod layers;
mod loss;

pub use attention::{
    mha_backward, mha_forward, multi_head_attention, scaled_dot_product_attention,
    sdpa_backward, AttentionCache, AttentionWeights,
};
pub use layers::{
    dropout, dropout_backward, ffn_backward, ffn_forward, global_average_pool,
    global_average_pool_backward, layer_norm, layer_norm_backward, layer_norm_forward,
    FeedForward, FfnCache, LayerNorm, LayerNormCache, Linear,
};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_grad, softmax_rows};

use ndarray::{Array, Dimension};
use rand::Rng;

use crate::error::{Error, Result};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;

pub(crate) fn ensure_finite<D: Dimension>(x: &Array<f64, D>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot_uniform<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ndarray::Array2<f64> {
    let bound = glorot_bound(fan_in, fan_out);
    ndarray::Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Row-major copy of `a` if it is not already row-major. Parameter and
/// gradient tensors are always kept in standard layout.
pub(crate) fn standard(a: ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}
