//! Transformer encoders over the target and content aspect streams, with
//! the three cross-attention wirings, plus the single-stream encoder used
//! for the behaviour sequence.
//!
//! There is no positional encoding, so every encoder is equivariant under
//! permutations of unpadded token positions. Sublayers are post-norm:
//! `norm(dropout(sublayer(x)) + x)`.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const MASK_BIAS: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrossMode {
    /// Single-stream encoder; only for the behaviour stream.
    None,
    /// Keys and values swapped between streams.
    Cb,
    /// Feed-forward inputs swapped between streams.
    Cm,
    /// Both swaps.
    Cbm,
}

impl CrossMode {
    fn swaps_attention(self) -> bool {
        matches!(self, CrossMode::Cb | CrossMode::Cbm)
    }

    fn swaps_ffn(self) -> bool {
        matches!(self, CrossMode::Cm | CrossMode::Cbm)
    }
}

impl fmt::Display for CrossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrossMode::None => "none",
            CrossMode::Cb => "cb",
            CrossMode::Cm => "cm",
            CrossMode::Cbm => "cbm",
        })
    }
}

impl FromStr for CrossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(CrossMode::None),
            "cb" => Ok(CrossMode::Cb),
            "cm" => Ok(CrossMode::Cm),
            "cbm" => Ok(CrossMode::Cbm),
            other => Err(Error::Config(format!("unknown cross mode {other:?} (expected cb, cm or cbm)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_encoders: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub d_model: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_encoders: 2,
            num_heads: 3,
            hidden_dim: 64,
            d_model: 48,
            dropout: 0.5,
            max_len: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_encoders == 0 || self.num_heads == 0 || self.hidden_dim == 0 || self.d_model == 0 || self.max_len == 0
        {
            return Err(Error::Config("encoder sizes must all be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

/// `[N, N]` additive bias: `MASK_BIAS` in every column whose key is padding.
pub fn key_mask_bias(mask: &[bool], rows: usize) -> Tensor {
    let n = mask.len();
    let mut t = Tensor::zeros(rows, n);
    for r in 0..rows {
        for (c, &real) in mask.iter().enumerate() {
            if !real {
                t.set(r, c, MASK_BIAS);
            }
        }
    }
    t
}

/// Scaled dot-product attention `softmax(QKᵀ/√d_k + bias)V`. `mask[j]` is
/// true for real key positions. Returns the output and the weight matrix.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: &[bool]) -> Result<(Var, Var)> {
    let (nq, dq) = g.value(q).dims2();
    let (nk, dk) = g.value(k).dims2();
    if dq != dk {
        return Err(Error::shape("attention", g.value(q).shape(), g.value(k).shape()));
    }
    if g.value(v).rows() != nk || mask.len() != nk {
        return Err(Error::shape("attention", g.value(v).shape(), &[nk, mask.len()]));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let bias = g.constant(key_mask_bias(mask, nq))?;
    let biased = g.add(scaled, bias)?;
    let weights = g.softmax_rows(biased)?;
    // key-order-free reductions keep the layer exactly permutation equivariant
    let out = g.matmul_sorted(weights, v)?;
    Ok((out, weights))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl AttentionWeights {
    fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionWeights {
            wq: store.add_glorot(format!("{prefix}.wq"), d, d, rng),
            wk: store.add_glorot(format!("{prefix}.wk"), d, d, rng),
            wv: store.add_glorot(format!("{prefix}.wv"), d, d, rng),
            wo: store.add_glorot(format!("{prefix}.wo"), d, d, rng),
        }
    }
}

/// Multi-head attention with queries from `x_q` and keys/values from
/// `x_kv`. Returns the output-projected result and each head's weights.
pub fn multi_head(
    g: &mut Graph,
    store: &ParamStore,
    w: &AttentionWeights,
    cfg: &EncoderConfig,
    x_q: Var,
    x_kv: Var,
    mask: &[bool],
) -> Result<(Var, Vec<Var>)> {
    let wq = g.param(store, w.wq)?;
    let wk = g.param(store, w.wk)?;
    let wv = g.param(store, w.wv)?;
    let wo = g.param(store, w.wo)?;
    let q = g.matmul(x_q, wq)?;
    let k = g.matmul(x_kv, wk)?;
    let v = g.matmul(x_kv, wv)?;
    let dh = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    let mut weights = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let (out, a) = attention(g, qh, kh, vh, mask)?;
        heads.push(out);
        weights.push(a);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    Ok((g.matmul(cat, wo)?, weights))
}

/// Weights of one stream in one encoder layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamLayer {
    pub attn: AttentionWeights,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

impl StreamLayer {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, h) = (cfg.d_model, cfg.hidden_dim);
        StreamLayer {
            attn: AttentionWeights::init(store, &format!("{prefix}.attn"), d, rng),
            ffn_w1: store.add_glorot(format!("{prefix}.ffn.w1"), d, h, rng),
            ffn_b1: store.add_zeros(format!("{prefix}.ffn.b1"), 1, h),
            ffn_w2: store.add_glorot(format!("{prefix}.ffn.w2"), h, d, rng),
            ffn_b2: store.add_zeros(format!("{prefix}.ffn.b2"), 1, d),
            norm1_gain: store.add_ones(format!("{prefix}.norm1.gain"), 1, d),
            norm1_bias: store.add_zeros(format!("{prefix}.norm1.bias"), 1, d),
            norm2_gain: store.add_ones(format!("{prefix}.norm2.gain"), 1, d),
            norm2_bias: store.add_zeros(format!("{prefix}.norm2.bias"), 1, d),
        }
    }

    fn ffn(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w1 = g.param(store, self.ffn_w1)?;
        let b1 = g.param(store, self.ffn_b1)?;
        let w2 = g.param(store, self.ffn_w2)?;
        let b2 = g.param(store, self.ffn_b2)?;
        let h = g.linear(x, w1, b1)?;
        let h = g.relu(h)?;
        g.linear(h, w2, b2)
    }

    fn norm(&self, g: &mut Graph, store: &ParamStore, x: Var, second: bool) -> Result<Var> {
        let (gain, bias) = if second {
            (self.norm2_gain, self.norm2_bias)
        } else {
            (self.norm1_gain, self.norm1_bias)
        };
        let gain = g.param(store, gain)?;
        let bias = g.param(store, bias)?;
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }

    /// `norm(dropout(sublayer) + residual)`
    fn residual(&self, g: &mut Graph, store: &ParamStore, sub: Var, res: Var, rate: f64, second: bool) -> Result<Var> {
        let sub = g.dropout(sub, rate)?;
        let sum = g.add(sub, res)?;
        self.norm(g, store, sum, second)
    }

    /// Standard self-attention encoder layer.
    pub fn forward_single(&self, g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, x: Var, mask: &[bool]) -> Result<(Var, Vec<Var>)> {
        let (a, weights) = multi_head(g, store, &self.attn, cfg, x, x, mask)?;
        let h = self.residual(g, store, a, x, cfg.dropout, false)?;
        let f = self.ffn(g, store, h)?;
        Ok((self.residual(g, store, f, h, cfg.dropout, true)?, weights))
    }
}

/// Both streams' weights for one layer of the pair encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLayer {
    pub target: StreamLayer,
    pub content: StreamLayer,
}

/// One layer over the two streams. Returns `(T_out, C_out, attention weights)`.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer(
    g: &mut Graph,
    store: &ParamStore,
    layer: &PairLayer,
    cfg: &EncoderConfig,
    t_in: Var,
    c_in: Var,
    mask: &[bool],
    mode: CrossMode,
) -> Result<(Var, Var, Vec<Var>)> {
    if mode == CrossMode::None {
        if t_in != c_in {
            return Err(Error::Config("cross mode none encodes a single stream".into()));
        }
        let (out, w) = layer.target.forward_single(g, store, cfg, t_in, mask)?;
        return Ok((out, out, w));
    }
    let (t_kv, c_kv) = if mode.swaps_attention() { (c_in, t_in) } else { (t_in, c_in) };
    let (t_att, mut weights) = multi_head(g, store, &layer.target.attn, cfg, t_in, t_kv, mask)?;
    let (c_att, cw) = multi_head(g, store, &layer.content.attn, cfg, c_in, c_kv, mask)?;
    weights.extend(cw);
    let t_mha = layer.target.residual(g, store, t_att, t_in, cfg.dropout, false)?;
    let c_mha = layer.content.residual(g, store, c_att, c_in, cfg.dropout, false)?;
    let (t_ffn_in, c_ffn_in) = if mode.swaps_ffn() { (c_mha, t_mha) } else { (t_mha, c_mha) };
    let t_f = layer.target.ffn(g, store, t_ffn_in)?;
    let c_f = layer.content.ffn(g, store, c_ffn_in)?;
    let t_out = layer.target.residual(g, store, t_f, t_mha, cfg.dropout, true)?;
    let c_out = layer.content.residual(g, store, c_f, c_mha, cfg.dropout, true)?;
    Ok((t_out, c_out, weights))
}

/// Zeroes the rows of padded positions.
pub fn zero_padded_rows(g: &mut Graph, x: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| m) {
        return Ok(x);
    }
    let (n, d) = g.value(x).dims2();
    if n != mask.len() {
        return Err(Error::shape("zero_padded_rows", g.value(x).shape(), &[mask.len(), d]));
    }
    let mut m = Tensor::zeros(n, d);
    for (r, &real) in mask.iter().enumerate() {
        if real {
            m.row_mut(r).fill(1.0);
        }
    }
    let m = g.constant(m)?;
    g.mul(x, m)
}

#[derive(Clone, Debug)]
pub struct EncodedPair {
    pub t_h: Var,
    pub c_h: Var,
    /// Per-head attention matrices in evaluation order.
    pub attention: Vec<Var>,
}

/// Input projections plus the stacked two-stream layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEncoder {
    pub config: EncoderConfig,
    pub mode: CrossMode,
    pub target_dim: usize,
    pub content_dim: usize,
    pub target_proj: ParamId,
    pub content_proj: ParamId,
    pub layers: Vec<PairLayer>,
}

impl PairEncoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: &EncoderConfig,
        mode: CrossMode,
        target_dim: usize,
        content_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if mode == CrossMode::None {
            return Err(Error::Config("the pair encoder needs cb, cm or cbm".into()));
        }
        if target_dim == 0 || content_dim == 0 {
            return Err(Error::Config("both aspect streams need a positive width".into()));
        }
        let d = config.d_model;
        let target_proj = store.add_glorot(format!("{prefix}.target_proj"), target_dim, d, rng);
        let content_proj = store.add_glorot(format!("{prefix}.content_proj"), content_dim, d, rng);
        let layers = (0..config.num_encoders)
            .map(|l| PairLayer {
                target: StreamLayer::init(store, &format!("{prefix}.l{l}.target"), config, rng),
                content: StreamLayer::init(store, &format!("{prefix}.l{l}.content"), config, rng),
            })
            .collect();
        Ok(PairEncoder {
            config: config.clone(),
            mode,
            target_dim,
            content_dim,
            target_proj,
            content_proj,
            layers,
        })
    }

    /// Runs the stack on `T_e` and `C_e`; outputs are `[N, d_model]` with
    /// padded rows zeroed.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, t_e: Var, c_e: Var, mask: &[bool]) -> Result<EncodedPair> {
        let (nt, dt) = g.value(t_e).dims2();
        let (nc, dc) = g.value(c_e).dims2();
        if nt != nc || nt != mask.len() {
            return Err(Error::shape("encode_pair", g.value(t_e).shape(), g.value(c_e).shape()));
        }
        if nt > self.config.max_len {
            return Err(Error::Input(format!(
                "sequence length {nt} exceeds the maximum {}",
                self.config.max_len
            )));
        }
        if dt != self.target_dim || dc != self.content_dim {
            return Err(Error::shape("encode_pair", &[dt, dc], &[self.target_dim, self.content_dim]));
        }
        let tp = g.param(store, self.target_proj)?;
        let cp = g.param(store, self.content_proj)?;
        let mut t = g.matmul(t_e, tp)?;
        let mut c = g.matmul(c_e, cp)?;
        let mut attention = Vec::new();
        for layer in &self.layers {
            let (t2, c2, w) = encoder_layer(g, store, layer, &self.config, t, c, mask, self.mode)?;
            t = t2;
            c = c2;
            attention.extend(w);
        }
        Ok(EncodedPair {
            t_h: zero_padded_rows(g, t, mask)?,
            c_h: zero_padded_rows(g, c, mask)?,
            attention,
        })
    }
}

/// Single-stream encoder for the behaviour sequence `G_e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviourEncoder {
    pub config: EncoderConfig,
    pub input_dim: usize,
    pub proj: ParamId,
    pub layers: Vec<StreamLayer>,
}

impl BehaviourEncoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: &EncoderConfig,
        input_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("behaviour embedding width must be positive".into()));
        }
        let proj = store.add_glorot(format!("{prefix}.proj"), input_dim, config.d_model, rng);
        let layers = (0..config.num_encoders)
            .map(|l| StreamLayer::init(store, &format!("{prefix}.l{l}"), config, rng))
            .collect();
        Ok(BehaviourEncoder {
            config: config.clone(),
            input_dim,
            proj,
            layers,
        })
    }

    /// `P_G`: `[N, d_model]` with padded rows zeroed.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, g_e: Var, mask: &[bool]) -> Result<(Var, Vec<Var>)> {
        let (n, d) = g.value(g_e).dims2();
        if d != self.input_dim || n != mask.len() {
            return Err(Error::shape("encode_behaviour", g.value(g_e).shape(), &[mask.len(), self.input_dim]));
        }
        if n > self.config.max_len {
            return Err(Error::Input(format!(
                "sequence length {n} exceeds the maximum {}",
                self.config.max_len
            )));
        }
        let proj = g.param(store, self.proj)?;
        let mut x = g.matmul(g_e, proj)?;
        let mut attention = Vec::new();
        for layer in &self.layers {
            let (y, w) = layer.forward_single(g, store, &self.config, x, mask)?;
            x = y;
            attention.extend(w);
        }
        Ok((zero_padded_rows(g, x, mask)?, attention))
    }
}

/// Assembles `T_e = [D ; G]` and `C_e = [E ; broadcast(I)]` column-wise
/// from whichever aspects are present. Each stream needs at least one.
pub fn build_inputs(
    g: &mut Graph,
    d: Option<Var>,
    gen: Option<Var>,
    e: Option<Var>,
    i: Option<Var>,
    n: usize,
) -> Result<(Var, Var)> {
    let mut target = Vec::new();
    for v in [d, gen].into_iter().flatten() {
        if g.value(v).rows() != n {
            return Err(Error::shape("build_inputs", g.value(v).shape(), &[n, g.value(v).cols()]));
        }
        target.push(v);
    }
    let mut content = Vec::new();
    if let Some(e) = e {
        if g.value(e).rows() != n {
            return Err(Error::shape("build_inputs", g.value(e).shape(), &[n, g.value(e).cols()]));
        }
        content.push(e);
    }
    if let Some(i) = i {
        if g.value(i).rows() != 1 {
            return Err(Error::shape("build_inputs", g.value(i).shape(), &[1, g.value(i).cols()]));
        }
        content.push(g.broadcast_rows(i, n)?);
    }
    if target.is_empty() || content.is_empty() {
        return Err(Error::Config("need at least one target aspect (D or G) and one content aspect (E or I)".into()));
    }
    let t = if target.len() == 1 { target[0] } else { g.concat_cols(&target)? };
    let c = if content.len() == 1 { content[0] } else { g.concat_cols(&content)? };
    Ok((t, c))
}
