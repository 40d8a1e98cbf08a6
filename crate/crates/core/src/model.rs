//! The encoder-only transformer classifier: tokenization, the five
//! experiment presets, initialization, batched forward/backward, and head
//! replacement for transfer to a new class set.
//!
//! Data flow per sample:
//!
//! ```text
//! tokens [S x D] -> input projection [S x d_model]
//!   -> encoder blocks (attention sublayers, then feed-forward; post-norm)
//!   -> dropout -> global average pool [d_model] -> head -> logits [C]
//! ```
//!
//! There is no positional encoding, so logits are invariant to token order.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{PipelineSpec, DEFAULT_PCA_COMPONENTS, DEFAULT_VARIANCE_THRESHOLD};
use crate::nn::{
    self, dropout, dropout_backward, ffn_backward, ffn_forward, global_average_pool,
    global_average_pool_backward, layer_norm_backward, layer_norm_forward, mha_backward,
    mha_forward, softmax_cross_entropy, softmax_cross_entropy_grad, AttentionCache,
    AttentionWeights, FeedForward, FfnCache, LayerNorm, LayerNormCache, Linear,
};

/// Preferred token width when the caller does not fix one.
pub const DEFAULT_TOKEN_DIM: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    /// Attention sublayers stacked in front of each block's feed-forward.
    pub attention_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    /// Dropout on each sublayer output before the residual add.
    pub sublayer_dropout: f64,
    pub seq_len: usize,
    pub token_dim: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn input_len(&self) -> usize {
        self.seq_len * self.token_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_blocks", self.n_blocks),
            ("attention_layers", self.attention_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("seq_len", self.seq_len),
            ("token_dim", self.token_dim),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        for (name, rate) in [
            ("dropout_rate", self.dropout_rate),
            ("sublayer_dropout", self.sublayer_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("{name} {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Number of scalar parameters implied by the configuration.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let input = self.token_dim * d + d;
        let attention = 4 * d * d + 2 * d;
        let ffn = d * self.d_ff + self.d_ff + self.d_ff * d + d + 2 * d;
        let block = self.attention_layers * attention + ffn;
        let head = d * self.n_classes + self.n_classes;
        input + self.n_blocks * block + head
    }
}

/// Width-related defaults shared by all presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub sublayer_dropout: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            dropout_rate: 0.5,
            sublayer_dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Transformer,
    TransformerFs,
    TransformerPca,
    #[serde(rename = "transformer4m_pca")]
    Transformer4mPca,
    #[serde(rename = "transformer4b_pca")]
    Transformer4bPca,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Transformer,
        Preset::TransformerFs,
        Preset::TransformerPca,
        Preset::Transformer4mPca,
        Preset::Transformer4bPca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Transformer => "transformer",
            Preset::TransformerFs => "transformer_fs",
            Preset::TransformerPca => "transformer_pca",
            Preset::Transformer4mPca => "transformer4m_pca",
            Preset::Transformer4bPca => "transformer4b_pca",
        }
    }

    /// Row label in the experiment table.
    pub fn display_name(self) -> &'static str {
        match self {
            Preset::Transformer => "Transformer",
            Preset::TransformerFs => "Transformer + FS",
            Preset::TransformerPca => "Transformer + PCA",
            Preset::Transformer4mPca => "Transformer4m + PCA",
            Preset::Transformer4bPca => "Transformer4b + PCA",
        }
    }

    pub fn n_blocks(self) -> usize {
        match self {
            Preset::Transformer4bPca => 4,
            _ => 1,
        }
    }

    pub fn attention_layers(self) -> usize {
        match self {
            Preset::Transformer4mPca => 3,
            _ => 1,
        }
    }

    pub fn uses_mask(self) -> bool {
        self == Preset::TransformerFs
    }

    pub fn uses_pca(self) -> bool {
        matches!(
            self,
            Preset::TransformerPca | Preset::Transformer4mPca | Preset::Transformer4bPca
        )
    }

    /// Feature reductions for this preset. PCA presets apply PCA to the raw
    /// spectrum unless `mask_before_pca` is set.
    pub fn pipeline(self, opts: &FeatureOptions) -> PipelineSpec {
        let mask = self.uses_mask() || (self.uses_pca() && opts.mask_before_pca);
        PipelineSpec {
            variance_threshold: mask.then_some(opts.variance_threshold),
            pca_components: self.uses_pca().then_some(opts.pca_components),
        }
    }

    pub fn model_config(
        self,
        dims: &ModelDims,
        layout: TokenLayout,
        n_classes: usize,
    ) -> ModelConfig {
        ModelConfig {
            n_blocks: self.n_blocks(),
            attention_layers: self.attention_layers(),
            n_heads: dims.n_heads,
            d_model: dims.d_model,
            d_ff: dims.d_ff,
            dropout_rate: dims.dropout_rate,
            sublayer_dropout: dims.sublayer_dropout,
            seq_len: layout.seq_len,
            token_dim: layout.token_dim,
            n_classes,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOptions {
    pub variance_threshold: f64,
    pub pca_components: usize,
    pub mask_before_pca: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            pca_components: DEFAULT_PCA_COMPONENTS,
            mask_before_pca: false,
        }
    }
}

/// How a reduced feature vector of length `input_len` becomes a token
/// sequence. Vectors shorter than `seq_len * token_dim` are zero-padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub input_len: usize,
    pub seq_len: usize,
    pub token_dim: usize,
}

impl TokenLayout {
    /// Picks `token_dim` (explicit, else the largest divisor of `len` in
    /// `2..=25`). Without a divisor, `pad` allows zero-padding up to a
    /// multiple of the token width.
    pub fn resolve(len: usize, token_dim: Option<usize>, pad: bool) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("empty feature vector".into()));
        }
        let exact = |d: usize| Self {
            input_len: len,
            seq_len: len / d,
            token_dim: d,
        };
        let padded = |d: usize| Self {
            input_len: len,
            seq_len: len.div_ceil(d),
            token_dim: d,
        };
        match token_dim {
            Some(0) => Err(Error::InvalidArgument("token_dim must be positive".into())),
            Some(d) if len % d == 0 => Ok(exact(d)),
            Some(d) if pad => Ok(padded(d)),
            Some(d) => Err(Error::TokenizationMismatch {
                seq_len: len / d,
                token_dim: d,
                len,
            }),
            None if len == 1 => Ok(exact(1)),
            None => match (2..=DEFAULT_TOKEN_DIM.min(len)).rev().find(|d| len % d == 0) {
                Some(d) => Ok(exact(d)),
                None if pad => Ok(padded(DEFAULT_TOKEN_DIM.min(len))),
                None => Err(Error::NoFactorization(len)),
            },
        }
    }

    pub fn padded_len(&self) -> usize {
        self.seq_len * self.token_dim
    }
}

/// Row-major reshape: token `s` is `v[s*D .. (s+1)*D]`.
pub fn tokenize(v: &[f64], seq_len: usize, token_dim: usize) -> Result<Array2<f64>> {
    if seq_len * token_dim != v.len() {
        return Err(Error::TokenizationMismatch {
            seq_len,
            token_dim,
            len: v.len(),
        });
    }
    Ok(Array2::from_shape_vec((seq_len, token_dim), v.to_vec()).expect("checked length"))
}

/// Tokenizes every row of `x`, zero-padding to the layout width.
pub fn tokenize_rows(x: &Array2<f64>, layout: &TokenLayout) -> Result<Array3<f64>> {
    if x.ncols() != layout.input_len {
        return Err(Error::DimMismatch {
            context: "tokenizer input".into(),
            expected: layout.input_len,
            actual: x.ncols(),
        });
    }
    let mut out = Array3::zeros((x.nrows(), layout.seq_len, layout.token_dim));
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut flat = out.index_axis_mut(Axis(0), i);
        let flat = flat
            .as_slice_mut()
            .expect("standard layout");
        for (dst, &src) in flat.iter_mut().zip(row.iter()) {
            *dst = src;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSublayer {
    pub attn: AttentionWeights,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub attention: Vec<AttentionSublayer>,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

/// Every trainable tensor of the model. Also used as the gradient set and
/// as optimizer moment storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub input_proj: Linear,
    pub blocks: Vec<EncoderBlock>,
    pub head: Linear,
}

/// A named, shaped view of one parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl Weights {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let input_proj = Linear::glorot(config.token_dim, d, &mut rng);
        let blocks = (0..config.n_blocks)
            .map(|_| EncoderBlock {
                attention: (0..config.attention_layers)
                    .map(|_| AttentionSublayer {
                        attn: AttentionWeights::glorot(
                            d,
                            config.n_heads,
                            config.d_head(),
                            &mut rng,
                        ),
                        norm: LayerNorm::new(d),
                    })
                    .collect(),
                ffn: FeedForward::glorot(d, config.d_ff, &mut rng),
                ffn_norm: LayerNorm::new(d),
            })
            .collect();
        Self {
            input_proj,
            blocks,
            head: init_head(d, config.n_classes, seed),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input_proj: self.input_proj.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| EncoderBlock {
                    attention: b
                        .attention
                        .iter()
                        .map(|s| AttentionSublayer {
                            attn: s.attn.zeros_like(),
                            norm: s.norm.zeros_like(),
                        })
                        .collect(),
                    ffn: b.ffn.zeros_like(),
                    ffn_norm: b.ffn_norm.zeros_like(),
                })
                .collect(),
            head: self.head.zeros_like(),
        }
    }

    fn named(&self) -> Vec<(String, &dyn AsTensor)> {
        let mut out: Vec<(String, &dyn AsTensor)> = vec![
            ("input_proj.w".into(), &self.input_proj.w),
            ("input_proj.b".into(), &self.input_proj.b),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            for (j, sub) in block.attention.iter().enumerate() {
                let p = format!("blocks.{i}.attention.{j}");
                out.push((format!("{p}.wq"), &sub.attn.wq));
                out.push((format!("{p}.wk"), &sub.attn.wk));
                out.push((format!("{p}.wv"), &sub.attn.wv));
                out.push((format!("{p}.wo"), &sub.attn.wo));
                out.push((format!("{p}.norm.gain"), &sub.norm.gain));
                out.push((format!("{p}.norm.bias"), &sub.norm.bias));
            }
            let p = format!("blocks.{i}.ffn");
            out.push((format!("{p}.inner.w"), &block.ffn.inner.w));
            out.push((format!("{p}.inner.b"), &block.ffn.inner.b));
            out.push((format!("{p}.outer.w"), &block.ffn.outer.w));
            out.push((format!("{p}.outer.b"), &block.ffn.outer.b));
            out.push((format!("{p}.norm.gain"), &block.ffn_norm.gain));
            out.push((format!("{p}.norm.bias"), &block.ffn_norm.bias));
        }
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    /// Every tensor with its name and shape, in a fixed order shared with
    /// [`Weights::tensors_mut`].
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.named()
            .into_iter()
            .map(|(name, t)| TensorRef {
                name,
                shape: t.shape_vec(),
                data: t.data(),
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.input_proj.w.as_slice_mut().expect("standard layout"),
            self.input_proj.b.as_slice_mut().expect("standard layout"),
        ];
        for block in self.blocks.iter_mut() {
            let EncoderBlock {
                attention,
                ffn,
                ffn_norm,
            } = block;
            for sub in attention.iter_mut() {
                let AttentionSublayer { attn, norm } = sub;
                out.push(attn.wq.as_slice_mut().expect("standard layout"));
                out.push(attn.wk.as_slice_mut().expect("standard layout"));
                out.push(attn.wv.as_slice_mut().expect("standard layout"));
                out.push(attn.wo.as_slice_mut().expect("standard layout"));
                out.push(norm.gain.as_slice_mut().expect("standard layout"));
                out.push(norm.bias.as_slice_mut().expect("standard layout"));
            }
            out.push(ffn.inner.w.as_slice_mut().expect("standard layout"));
            out.push(ffn.inner.b.as_slice_mut().expect("standard layout"));
            out.push(ffn.outer.w.as_slice_mut().expect("standard layout"));
            out.push(ffn.outer.b.as_slice_mut().expect("standard layout"));
            out.push(ffn_norm.gain.as_slice_mut().expect("standard layout"));
            out.push(ffn_norm.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head.w.as_slice_mut().expect("standard layout"));
        out.push(self.head.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += other`, tensor by tensor in a fixed order.
    pub fn add_assign(&mut self, other: &Weights) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s.data) {
                *d += v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

trait AsTensor {
    fn shape_vec(&self) -> Vec<usize>;
    fn data(&self) -> &[f64];
}

impl AsTensor for Array2<f64> {
    fn shape_vec(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
    fn data(&self) -> &[f64] {
        self.as_slice().expect("standard layout")
    }
}

impl AsTensor for Array1<f64> {
    fn shape_vec(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
    fn data(&self) -> &[f64] {
        self.as_slice().expect("standard layout")
    }
}

/// The classification head draws from its own stream of the seed, so
/// reinitializing it with the original seed reproduces the original head.
fn init_head(d_model: usize, n_classes: usize, seed: u64) -> Linear {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Linear::glorot(d_model, n_classes, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
}

/// Initializes a model for `preset`; weights are uniform Glorot, biases and
/// layer-norm shifts zero, layer-norm gains one.
pub fn build(
    preset: Preset,
    dims: &ModelDims,
    layout: TokenLayout,
    n_classes: usize,
    init_seed: u64,
) -> Result<ModelParams> {
    ModelParams::init(preset.model_config(dims, layout, n_classes), init_seed)
}

/// Keeps the body and reinitializes the head for `new_n_classes`.
pub fn replace_head(m: &ModelParams, new_n_classes: usize, seed: u64) -> Result<ModelParams> {
    if new_n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "a classifier needs at least 2 classes, got {new_n_classes}"
        )));
    }
    let mut out = m.clone();
    out.config.n_classes = new_n_classes;
    out.weights.head = init_head(m.config.d_model, new_n_classes, seed);
    Ok(out)
}

struct SublayerTrace {
    attn: AttentionCache,
    drop: Option<Array2<f64>>,
    norm: LayerNormCache,
}

struct BlockTrace {
    attention: Vec<SublayerTrace>,
    ffn: FfnCache,
    ffn_drop: Option<Array2<f64>>,
    ffn_norm: LayerNormCache,
}

/// Intermediates of one sample's forward pass.
pub struct ForwardTrace {
    tokens: Array2<f64>,
    blocks: Vec<BlockTrace>,
    drop: Option<Array2<f64>>,
    pooled: Array1<f64>,
    logits: Array1<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array1<f64> {
        &self.logits
    }

    /// Global-average-pool activations.
    pub fn pooled(&self) -> &Array1<f64> {
        &self.pooled
    }
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = Weights::init(&config, seed);
        Ok(Self { config, weights })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let d = c.d_model;
        let check = |name: &str, got: Vec<usize>, want: Vec<usize>| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!("{name}: {got:?} != {want:?}")))
            }
        };
        let w = &self.weights;
        check("input_proj.w", w.input_proj.w.shape().to_vec(), vec![c.token_dim, d])?;
        check("head.w", w.head.w.shape().to_vec(), vec![d, c.n_classes])?;
        if w.blocks.len() != c.n_blocks {
            return Err(Error::Shape(format!(
                "{} blocks, config says {}",
                w.blocks.len(),
                c.n_blocks
            )));
        }
        for b in &w.blocks {
            if b.attention.len() != c.attention_layers {
                return Err(Error::Shape("attention sublayer count".into()));
            }
            for s in &b.attention {
                s.attn.validate()?;
                check("attention.wq", s.attn.wq.shape().to_vec(), vec![d, d])?;
            }
            check("ffn.inner.w", b.ffn.inner.w.shape().to_vec(), vec![d, c.d_ff])?;
        }
        if self.weights.param_count() != c.param_count() {
            return Err(Error::Shape("parameter count disagrees with config".into()));
        }
        if !self.weights.is_finite() {
            return Err(Error::NonFinite("model weights".into()));
        }
        Ok(())
    }

    /// Forward pass of one `[S x D]` token matrix, keeping intermediates.
    pub fn forward_sample<R: Rng + ?Sized>(
        &self,
        tokens: ArrayView2<f64>,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        let c = &self.config;
        if tokens.dim() != (c.seq_len, c.token_dim) {
            return Err(Error::Shape(format!(
                "token matrix {:?}, model expects {:?}",
                tokens.dim(),
                (c.seq_len, c.token_dim)
            )));
        }
        let tokens = tokens.to_owned();
        let mut x = self.weights.input_proj.forward(&tokens)?;
        let mut blocks = Vec::with_capacity(c.n_blocks);
        for block in &self.weights.blocks {
            let mut attention = Vec::with_capacity(block.attention.len());
            for sub in &block.attention {
                let (a, attn) = mha_forward(&x, &sub.attn)?;
                let (a, drop) = dropout(&a, c.sublayer_dropout, rng, training)?;
                let (y, norm) = layer_norm_forward(&(&x + &a), &sub.norm, nn::LAYER_NORM_EPS)?;
                attention.push(SublayerTrace { attn, drop, norm });
                x = y;
            }
            let (f, ffn) = ffn_forward(&x, &block.ffn)?;
            let (f, ffn_drop) = dropout(&f, c.sublayer_dropout, rng, training)?;
            let (y, ffn_norm) =
                layer_norm_forward(&(&x + &f), &block.ffn_norm, nn::LAYER_NORM_EPS)?;
            blocks.push(BlockTrace {
                attention,
                ffn,
                ffn_drop,
                ffn_norm,
            });
            x = y;
        }
        let (x, drop) = dropout(&x, c.dropout_rate, rng, training)?;
        let pooled = global_average_pool(&x)?;
        let logits = self.weights.head.w.t().dot(&pooled) + &self.weights.head.b;
        nn::ensure_finite(&logits, "logits")?;
        Ok(ForwardTrace {
            tokens,
            blocks,
            drop,
            pooled,
            logits,
        })
    }

    /// Gradients of `d_logits . logits` with respect to every parameter.
    pub fn backward_sample(&self, trace: &ForwardTrace, d_logits: &Array1<f64>) -> Weights {
        let c = &self.config;
        let w = &self.weights;
        let mut grads = w.zeros_like();

        grads.head.w = nn::standard(outer(&trace.pooled, d_logits));
        grads.head.b = d_logits.clone();
        let d_pooled = w.head.w.dot(d_logits);
        let d_x = global_average_pool_backward(&d_pooled, c.seq_len);
        let mut d_x = dropout_backward(&d_x, trace.drop.as_ref());

        for ((block, bt), bg) in w
            .blocks
            .iter()
            .zip(&trace.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            let (d_sum, g_norm) = layer_norm_backward(&d_x, &block.ffn_norm, &bt.ffn_norm);
            bg.ffn_norm = g_norm;
            let d_f = dropout_backward(&d_sum, bt.ffn_drop.as_ref());
            let (d_in, g_ffn) = ffn_backward(&d_f, &block.ffn, &bt.ffn);
            bg.ffn = g_ffn;
            d_x = d_sum + d_in;
            for ((sub, st), sg) in block
                .attention
                .iter()
                .zip(&bt.attention)
                .zip(bg.attention.iter_mut())
                .rev()
            {
                let (d_sum, g_norm) = layer_norm_backward(&d_x, &sub.norm, &st.norm);
                sg.norm = g_norm;
                let d_a = dropout_backward(&d_sum, st.drop.as_ref());
                let (d_in, g_attn) = mha_backward(&d_a, &sub.attn, &st.attn);
                sg.attn = g_attn;
                d_x = d_sum + d_in;
            }
        }
        let (_, g_proj) = w.input_proj.backward(&trace.tokens, &d_x);
        grads.input_proj = g_proj;
        grads
    }

    /// Logits `[B x C]` for a batch `[B x S x D]`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &Array3<f64>,
        training: bool,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let seeds: Vec<u64> = (0..batch.len_of(Axis(0))).map(|_| rng.random()).collect();
        let rows: Vec<Array1<f64>> = seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.forward_sample(batch.index_axis(Axis(0), i), training, &mut rng)
                    .map(|t| t.logits)
            })
            .collect::<Result<_>>()?;
        Ok(stack_rows(&rows, self.config.n_classes))
    }

    /// Pooled encoder activations `[B x d_model]` in inference mode.
    pub fn pooled(&self, batch: &Array3<f64>) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows: Vec<Array1<f64>> = batch
            .outer_iter()
            .map(|t| self.forward_sample(t, false, &mut rng).map(|t| t.pooled))
            .collect::<Result<_>>()?;
        Ok(stack_rows(&rows, self.config.d_model))
    }

    /// Mean cross-entropy over the batch and its gradient. Per-sample
    /// gradients are computed in parallel and summed in sample order.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        batch: &Array3<f64>,
        labels: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Weights)> {
        let b = batch.len_of(Axis(0));
        if labels.len() != b {
            return Err(Error::Shape(format!("{} labels for {b} samples", labels.len())));
        }
        let seeds: Vec<u64> = (0..b).map(|_| rng.random()).collect();
        let traces: Vec<ForwardTrace> = seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.forward_sample(batch.index_axis(Axis(0), i), training, &mut rng)
            })
            .collect::<Result<_>>()?;
        let logits = stack_rows(
            &traces.iter().map(|t| t.logits.clone()).collect::<Vec<_>>(),
            self.config.n_classes,
        );
        let (loss, probs) = softmax_cross_entropy(&logits, labels)?;
        let d_logits = softmax_cross_entropy_grad(&probs, labels);
        let per_sample: Vec<Weights> = traces
            .par_iter()
            .enumerate()
            .map(|(i, t)| self.backward_sample(t, &d_logits.row(i).to_owned()))
            .collect();
        let mut total = self.weights.zeros_like();
        for g in &per_sample {
            total.add_assign(g);
        }
        Ok((loss, total))
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

fn stack_rows(rows: &[Array1<f64>], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        out.slice_mut(s![i, ..]).assign(r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn micro(preset: Preset) -> ModelParams {
        let dims = ModelDims {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            ..ModelDims::default()
        };
        let layout = TokenLayout::resolve(24, Some(4), false).unwrap();
        build(preset, &dims, layout, 3, 5).unwrap()
    }

    #[test]
    fn tokenize_reshapes_row_major() {
        let t = tokenize(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2).unwrap();
        assert_eq!(t, ndarray::array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let one = tokenize(&[1.0, 2.0], 1, 2).unwrap();
        assert_eq!(one.dim(), (1, 2));
        assert!(matches!(
            tokenize(&[1.0; 5], 2, 2),
            Err(Error::TokenizationMismatch { .. })
        ));
    }

    #[test]
    fn default_layout_for_reduced_vector() {
        let l = TokenLayout::resolve(4500, None, false).unwrap();
        assert_eq!((l.seq_len, l.token_dim), (180, 25));
        let v = vec![0.5; 4500];
        assert_eq!(tokenize(&v, l.seq_len, l.token_dim).unwrap().dim(), (180, 25));
        assert_eq!(TokenLayout::resolve(7500, None, false).unwrap().token_dim, 25);
        assert_eq!(TokenLayout::resolve(64, None, false).unwrap().token_dim, 16);
    }

    #[test]
    fn prime_length_needs_padding() {
        assert!(matches!(
            TokenLayout::resolve(7919, None, false),
            Err(Error::NoFactorization(7919))
        ));
        let l = TokenLayout::resolve(7919, None, true).unwrap();
        assert_eq!((l.seq_len, l.token_dim), (317, 25));
        let x = Array2::ones((2, 7919));
        let t = tokenize_rows(&x, &l).unwrap();
        assert_eq!(t.dim(), (2, 317, 25));
        assert_eq!(t[[1, 316, 24]], 0.0);
        assert_eq!(t[[1, 316, 18]], 1.0);
    }

    #[test]
    fn presets_round_trip_names() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.name()));
        }
        assert!(matches!("transformer9".parse::<Preset>(), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn preset_structure() {
        let four_b = micro(Preset::Transformer4bPca);
        assert_eq!(four_b.config.n_blocks, 4);
        assert!(four_b.weights.blocks.iter().all(|b| b.attention.len() == 1));
        let four_m = micro(Preset::Transformer4mPca);
        assert_eq!(four_m.weights.blocks.len(), 1);
        assert_eq!(four_m.weights.blocks[0].attention.len(), 3);
        for p in [Preset::Transformer, Preset::TransformerFs, Preset::TransformerPca] {
            assert_eq!(micro(p).config.n_blocks, 1);
        }
    }

    #[test]
    fn preset_pipelines() {
        let opts = FeatureOptions::default();
        assert_eq!(Preset::Transformer.pipeline(&opts), PipelineSpec::IDENTITY);
        let fs = Preset::TransformerFs.pipeline(&opts);
        assert_eq!(fs.variance_threshold, Some(3.68e-5));
        assert_eq!(fs.pca_components, None);
        let pca = Preset::TransformerPca.pipeline(&opts);
        assert_eq!(pca.variance_threshold, None);
        assert_eq!(pca.pca_components, Some(4500));
        let both = Preset::Transformer4bPca.pipeline(&FeatureOptions {
            mask_before_pca: true,
            ..opts
        });
        assert!(both.variance_threshold.is_some() && both.pca_components.is_some());
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(micro(Preset::Transformer4bPca), micro(Preset::Transformer4bPca));
    }

    #[test]
    fn zero_input_gives_uniform_logits() {
        let m = micro(Preset::TransformerPca);
        let batch = Array3::zeros((1, 6, 4));
        let logits = m.forward(&batch, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // head bias is zero and every pooled feature is zero after layer norm
        assert!(logits.iter().all(|&v| v == logits[[0, 0]]));
    }

    #[test]
    fn replace_head_keeps_body() {
        let m = micro(Preset::Transformer4bPca);
        let r = replace_head(&m, 4, 77).unwrap();
        assert_eq!(r.weights.input_proj, m.weights.input_proj);
        assert_eq!(r.weights.blocks, m.weights.blocks);
        assert_eq!(r.weights.head.w.dim(), (8, 4));
        r.validate().unwrap();
        let same = replace_head(&m, 3, 5).unwrap();
        assert_eq!(same, m);
        assert!(replace_head(&m, 1, 0).is_err());

        let batch = Array3::from_shape_fn((2, 6, 4), |(b, s, d)| (b + s * d) as f64 * 0.1);
        assert_eq!(m.pooled(&batch).unwrap(), r.pooled(&batch).unwrap());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let m = micro(Preset::Transformer4mPca);
        let tokens = Array2::from_shape_fn((6, 4), |(s, d)| (s as f64 - d as f64) * 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = m.forward_sample(tokens.view(), true, &mut rng).unwrap();
        let g = m.backward_sample(&trace, &Array1::zeros(3));
        assert!(g.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn tensor_lists_agree() {
        let mut m = micro(Preset::Transformer4mPca);
        let names: Vec<(String, usize)> = m
            .weights
            .tensors()
            .iter()
            .map(|t| (t.name.clone(), t.data.len()))
            .collect();
        let lens: Vec<usize> = m.weights.tensors_mut().iter().map(|t| t.len()).collect();
        assert_eq!(names.iter().map(|n| n.1).collect::<Vec<_>>(), lens);
        assert_eq!(names[0].0, "input_proj.w");
        assert_eq!(names.last().unwrap().0, "head.b");
    }

    proptest! {
        #[test]
        fn param_count_formula(
            n_blocks in 1usize..4,
            attention_layers in 1usize..4,
            n_heads in 1usize..4,
            head_width in 1usize..5,
            d_ff in 1usize..20,
            token_dim in 1usize..10,
            n_classes in 2usize..9,
        ) {
            let config = ModelConfig {
                n_blocks,
                attention_layers,
                n_heads,
                d_model: n_heads * head_width,
                d_ff,
                dropout_rate: 0.5,
                sublayer_dropout: 0.0,
                seq_len: 3,
                token_dim,
                n_classes,
            };
            let m = ModelParams::init(config.clone(), 9).unwrap();
            prop_assert_eq!(m.weights.param_count(), config.param_count());
        }
    }
}
