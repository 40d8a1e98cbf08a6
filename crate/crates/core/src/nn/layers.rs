use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_finite, glorot_uniform, standard};
use crate::error::{Error, Result};

/// Affine map `y = x W + b`, applied to each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            w: glorot_uniform(fan_in, fan_out, fan_in, fan_out, rng),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.w.nrows() {
            return Err(Error::Shape(format!(
                "linear input width {} != {}",
                x.ncols(),
                self.w.nrows()
            )));
        }
        Ok(x.dot(&self.w) + &self.b)
    }

    /// Returns `(d_x, grads)` given the layer input `x`.
    pub fn backward(&self, x: &Array2<f64>, d_y: &Array2<f64>) -> (Array2<f64>, Linear) {
        let grads = Linear {
            w: standard(x.t().dot(d_y)),
            b: d_y.sum_axis(Axis(0)),
        };
        (d_y.dot(&self.w.t()), grads)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gain: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gain: Array1::zeros(self.gain.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Normalizes each row to zero mean and unit (population) variance, then
/// applies `gain` and `bias`.
pub fn layer_norm(x: &Array2<f64>, p: &LayerNorm, eps: f64) -> Result<Array2<f64>> {
    layer_norm_forward(x, p, eps).map(|(y, _)| y)
}

pub fn layer_norm_forward(
    x: &Array2<f64>,
    p: &LayerNorm,
    eps: f64,
) -> Result<(Array2<f64>, LayerNormCache)> {
    let d = x.ncols();
    if d == 0 || p.gain.len() != d || p.bias.len() != d {
        return Err(Error::Shape(format!(
            "layer norm width {d} with gain {} and bias {}",
            p.gain.len(),
            p.bias.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("layer norm eps {eps}")));
    }
    let mut normalized = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + eps).sqrt();
        inv_std[i] = s;
        for (dst, &v) in normalized.row_mut(i).iter_mut().zip(row.iter()) {
            *dst = (v - mean) * s;
        }
    }
    let y = &normalized * &p.gain + &p.bias;
    ensure_finite(&y, "layer norm output")?;
    Ok((y, LayerNormCache { normalized, inv_std }))
}

pub fn layer_norm_backward(
    d_y: &Array2<f64>,
    p: &LayerNorm,
    cache: &LayerNormCache,
) -> (Array2<f64>, LayerNorm) {
    let grads = LayerNorm {
        gain: (d_y * &cache.normalized).sum_axis(Axis(0)),
        bias: d_y.sum_axis(Axis(0)),
    };
    let d_norm = d_y * &p.gain;
    let d = d_y.ncols() as f64;
    let mut d_x = Array2::zeros(d_y.raw_dim());
    for i in 0..d_y.nrows() {
        let g = d_norm.row(i);
        let xh = cache.normalized.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let s = cache.inv_std[i];
        for ((dst, &gj), &xj) in d_x.row_mut(i).iter_mut().zip(g.iter()).zip(xh.iter()) {
            *dst = s * (gj - mean_g - xj * mean_gx);
        }
    }
    (d_x, grads)
}

/// Position-wise `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn glorot<R: Rng + ?Sized>(d_model: usize, d_ff: usize, rng: &mut R) -> Self {
        Self {
            inner: Linear::glorot(d_model, d_ff, rng),
            outer: Linear::glorot(d_ff, d_model, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            inner: self.inner.zeros_like(),
            outer: self.outer.zeros_like(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    x: Array2<f64>,
    hidden: Array2<f64>,
}

pub fn ffn_forward(x: &Array2<f64>, p: &FeedForward) -> Result<(Array2<f64>, FfnCache)> {
    if p.inner.w.ncols() != p.outer.w.nrows() {
        return Err(Error::Shape("feed-forward inner widths disagree".into()));
    }
    let hidden = p.inner.forward(x)?.mapv(|v| v.max(0.0));
    let y = p.outer.forward(&hidden)?;
    ensure_finite(&y, "feed-forward output")?;
    Ok((
        y,
        FfnCache {
            x: x.clone(),
            hidden,
        },
    ))
}

pub fn ffn_backward(
    d_y: &Array2<f64>,
    p: &FeedForward,
    cache: &FfnCache,
) -> (Array2<f64>, FeedForward) {
    let (d_hidden, outer) = p.outer.backward(&cache.hidden, d_y);
    // relu'(pre) = 1 where the cached activation is positive
    let d_pre = d_hidden * &cache.hidden.mapv(|h| if h > 0.0 { 1.0 } else { 0.0 });
    let (d_x, inner) = p.inner.backward(&cache.x, &d_pre);
    (d_x, FeedForward { inner, outer })
}

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; the
/// returned mask holds those per-element factors. Inference is the identity.
pub fn dropout<R: Rng + ?Sized>(
    x: &Array2<f64>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep_scale
        }
    });
    Ok((x * &mask, Some(mask)))
}

pub fn dropout_backward(d_y: &Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => d_y * m,
        None => d_y.clone(),
    }
}

/// Mean over the sequence axis.
pub fn global_average_pool(x: &Array2<f64>) -> Result<Array1<f64>> {
    x.mean_axis(Axis(0))
        .ok_or_else(|| Error::Shape("global average pool over an empty sequence".into()))
}

pub fn global_average_pool_backward(d_y: &Array1<f64>, seq_len: usize) -> Array2<f64> {
    let row = d_y / seq_len as f64;
    row.broadcast((seq_len, d_y.len()))
        .expect("broadcast row")
        .to_owned()
}
