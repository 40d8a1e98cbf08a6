use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_finite, glorot_uniform, softmax_rows, standard};
use crate::error::{Error, Result};

/// Multi-head attention projections. The per-head `[d_model x d_head]`
/// query/key/value matrices are stored side by side, so head `h` owns
/// columns `h*d_head .. (h+1)*d_head` of `wq`, `wk` and `wv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    /// `[(n_heads * d_head) x d_model]`
    pub wo: Array2<f64>,
    pub n_heads: usize,
}

impl AttentionWeights {
    pub fn glorot<R: Rng + ?Sized>(
        d_model: usize,
        n_heads: usize,
        d_head: usize,
        rng: &mut R,
    ) -> Self {
        let inner = n_heads * d_head;
        Self {
            wq: glorot_uniform(d_model, inner, d_model, d_head, rng),
            wk: glorot_uniform(d_model, inner, d_model, d_head, rng),
            wv: glorot_uniform(d_model, inner, d_model, d_head, rng),
            wo: glorot_uniform(inner, d_model, inner, d_model, rng),
            n_heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            wq: Array2::zeros(self.wq.raw_dim()),
            wk: Array2::zeros(self.wk.raw_dim()),
            wv: Array2::zeros(self.wv.raw_dim()),
            wo: Array2::zeros(self.wo.raw_dim()),
            n_heads: self.n_heads,
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.nrows()
    }

    pub fn d_head(&self) -> usize {
        self.wq.ncols() / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        let inner = self.wq.ncols();
        if self.n_heads == 0 || inner == 0 || inner % self.n_heads != 0 {
            return Err(Error::Shape(format!(
                "attention inner width {inner} not divisible by {} heads",
                self.n_heads
            )));
        }
        for (name, m) in [("wk", &self.wk), ("wv", &self.wv)] {
            if m.dim() != (d, inner) {
                return Err(Error::Shape(format!(
                    "{name} is {:?}, expected {:?}",
                    m.dim(),
                    (d, inner)
                )));
            }
        }
        if self.wo.dim() != (inner, d) {
            return Err(Error::Shape(format!(
                "wo is {:?}, expected {:?}",
                self.wo.dim(),
                (inner, d)
            )));
        }
        Ok(())
    }
}

/// `attn = softmax(Q K^T / sqrt(d_head))`, `output = attn V`.
pub fn scaled_dot_product_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if q.ncols() != k.ncols() {
        return Err(Error::Shape(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::Shape(format!(
            "key length {} != value length {}",
            k.nrows(),
            v.nrows()
        )));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let logits = q.dot(&k.t()) * scale;
    let attn = softmax_rows(&logits);
    let out = attn.dot(&v);
    Ok((out, attn))
}

/// Gradients of scaled dot-product attention with respect to Q, K and V.
pub fn sdpa_backward(
    d_out: ArrayView2<f64>,
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    attn: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let d_attn = d_out.dot(&v.t());
    let d_v = attn.t().dot(&d_out);
    // softmax Jacobian, row by row: a * (g - <g, a>)
    let row_dot = (&d_attn * &attn).sum_axis(Axis(1)).insert_axis(Axis(1));
    let d_logits = &attn * &(&d_attn - &row_dot) * scale;
    let d_q = d_logits.dot(&k);
    let d_k = d_logits.t().dot(&q);
    (d_q, d_k, d_v)
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    heads: Array2<f64>,
}

impl AttentionCache {
    /// Attention probabilities of each head, `[S x S]`.
    pub fn probs(&self) -> &[Array2<f64>] {
        &self.probs
    }
}

pub fn multi_head_attention(x: &Array2<f64>, w: &AttentionWeights) -> Result<Array2<f64>> {
    mha_forward(x, w).map(|(out, _)| out)
}

pub fn mha_forward(
    x: &Array2<f64>,
    w: &AttentionWeights,
) -> Result<(Array2<f64>, AttentionCache)> {
    w.validate()?;
    if x.ncols() != w.d_model() {
        return Err(Error::Shape(format!(
            "attention input width {} != d_model {}",
            x.ncols(),
            w.d_model()
        )));
    }
    let q = x.dot(&w.wq);
    let k = x.dot(&w.wk);
    let v = x.dot(&w.wv);
    let dh = w.d_head();
    let mut heads = Array2::zeros((x.nrows(), w.n_heads * dh));
    let mut probs = Vec::with_capacity(w.n_heads);
    for h in 0..w.n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (out, attn) =
            scaled_dot_product_attention(q.slice(cols), k.slice(cols), v.slice(cols))?;
        heads.slice_mut(cols).assign(&out);
        probs.push(attn);
    }
    let out = heads.dot(&w.wo);
    ensure_finite(&out, "multi-head attention output")?;
    Ok((
        out,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            heads,
        },
    ))
}

/// Returns `(d_x, weight gradients)`.
pub fn mha_backward(
    d_out: &Array2<f64>,
    w: &AttentionWeights,
    cache: &AttentionCache,
) -> (Array2<f64>, AttentionWeights) {
    let dh = w.d_head();
    let d_wo = cache.heads.t().dot(d_out);
    let d_heads = d_out.dot(&w.wo.t());
    let mut d_q = Array2::zeros(cache.q.raw_dim());
    let mut d_k = Array2::zeros(cache.k.raw_dim());
    let mut d_v = Array2::zeros(cache.v.raw_dim());
    for h in 0..w.n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (gq, gk, gv) = sdpa_backward(
            d_heads.slice(cols),
            cache.q.slice(cols),
            cache.k.slice(cols),
            cache.v.slice(cols),
            cache.probs[h].view(),
        );
        d_q.slice_mut(cols).assign(&gq);
        d_k.slice_mut(cols).assign(&gk);
        d_v.slice_mut(cols).assign(&gv);
    }
    let xt = cache.x.t();
    let grads = AttentionWeights {
        wq: standard(xt.dot(&d_q)),
        wk: standard(xt.dot(&d_k)),
        wv: standard(xt.dot(&d_v)),
        wo: standard(d_wo),
        n_heads: w.n_heads,
    };
    let d_x = d_q.dot(&w.wq.t()) + d_k.dot(&w.wk.t()) + d_v.dot(&w.wv.t());
    (d_x, grads)
}
