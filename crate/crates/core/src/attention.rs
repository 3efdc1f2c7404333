//! Masked self-attention and prompt-driven cross-attention.

use crate::autograd::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::params::{Init, Scope};
use crate::tensor::{Element, Tensor};

/// Added to the mask before the logarithm so fully masked keys stay finite.
pub const MASK_EPS: f64 = 1e-6;
/// Penalty per unit of `1 - M` in the hard-bias variant.
pub const HARD_PENALTY: f64 = 1e4;

/// How a spatial mask turns into an additive score bias.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskBias {
    /// `log(M + eps)`; graded for soft masks.
    #[default]
    Log,
    /// `(M - 1) * 1e4`.
    Hard,
}

/// Block families of the U-Net, used to place attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockFamily {
    Down,
    Mid,
    Up,
}

impl BlockFamily {
    pub const ALL: [BlockFamily; 3] = [BlockFamily::Down, BlockFamily::Mid, BlockFamily::Up];
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionPlacement {
    pub masked_self_attn: Vec<BlockFamily>,
    pub prompt_cross_attn: Vec<BlockFamily>,
}

impl Default for AttentionPlacement {
    fn default() -> Self {
        AttentionPlacement {
            masked_self_attn: BlockFamily::ALL.to_vec(),
            prompt_cross_attn: vec![BlockFamily::Mid],
        }
    }
}

impl AttentionPlacement {
    pub fn self_at(&self, f: BlockFamily) -> bool {
        self.masked_self_attn.contains(&f)
    }

    pub fn cross_at(&self, f: BlockFamily) -> bool {
        self.prompt_cross_attn.contains(&f)
    }

    /// All 8 subsets of the three families, in bitmask order (down = 1, mid = 2, up = 4).
    pub fn subsets() -> Vec<Vec<BlockFamily>> {
        (0..8u8)
            .map(|bits| BlockFamily::ALL.iter().enumerate().filter(|(i, _)| bits & (1 << i) != 0).map(|(_, &f)| f).collect())
            .collect()
    }
}

pub fn init_self_attention(init: &mut Init<'_>, channels: usize) -> Result<()> {
    init.linear("q", channels, channels, false)?;
    init.linear("k", channels, channels, false)?;
    init.linear("v", channels, channels, false)?;
    init.linear("out", channels, channels, true)
}

/// Cross-attention whose context comes from a zero-initialized 1x1 conv over the prompt latent.
pub fn init_cross_attention(init: &mut Init<'_>, channels: usize, context: usize, prompt_channels: usize) -> Result<()> {
    init.zero_conv("zero_conv", prompt_channels, context, 1)?;
    init.linear("q", channels, channels, false)?;
    init.linear("k", context, channels, true)?;
    init.linear("v", context, channels, true)?;
    init.linear("out", channels, channels, true)
}

pub struct AttentionOutput {
    /// `[N, Lq, C]`
    pub out: Var,
    /// Post-softmax weights `[N * heads, Lq, Lk]`.
    pub probs: Var,
}

fn split_heads<T: Element>(g: &mut Graph<T>, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (n, l, c) = (s[0], s[1], s[2]);
    let r = g.reshape(x, &[n, l, heads, c / heads])?;
    let p = g.permute(r, &[0, 2, 1, 3])?;
    g.reshape(p, &[n * heads, l, c / heads])
}

fn merge_heads<T: Element>(g: &mut Graph<T>, x: Var, n: usize, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (l, dk) = (s[1], s[2]);
    let r = g.reshape(x, &[n, heads, l, dk])?;
    let p = g.permute(r, &[0, 2, 1, 3])?;
    g.reshape(p, &[n, l, heads * dk])
}

fn tokens<T: Element>(g: &Graph<T>, x: Var) -> Result<(usize, usize, usize)> {
    match *g.shape(x) {
        [n, l, c] => Ok((n, l, c)),
        ref s => Err(dim_err!("attention expects [N, L, C] tokens, got {s:?}")),
    }
}

/// `softmax(QKᵀ/√d_k + bias) V` followed by the output projection.
fn attend<T: Element>(
    g: &mut Graph<T>,
    p: &Scope<'_>,
    q_in: Var,
    kv_in: Var,
    heads: usize,
    key_bias: Option<Var>,
) -> Result<AttentionOutput> {
    let (n, _, c) = tokens(g, q_in)?;
    if heads == 0 || c % heads != 0 {
        return Err(dim_err!("{heads} heads do not divide width {c}"));
    }
    let q = g.linear(q_in, p.get("q.weight")?, p.try_get("q.bias"))?;
    let k = g.linear(kv_in, p.get("k.weight")?, p.try_get("k.bias"))?;
    let v = g.linear(kv_in, p.get("v.weight")?, p.try_get("v.bias"))?;
    let (q, k, v) = (split_heads(g, q, heads)?, split_heads(g, k, heads)?, split_heads(g, v, heads)?);
    // scaling the queries is cheaper than scaling the L x L scores
    let q = g.scale(q, T::of(1.0 / ((c / heads) as f64).sqrt()))?;
    let mut scores = g.bmm(q, k, false, true)?;
    if let Some(bias) = key_bias {
        scores = g.add_key_bias(scores, bias, heads)?;
    }
    let probs = g.softmax_lastdim(scores)?;
    let mixed = g.bmm(probs, v, false, false)?;
    let merged = merge_heads(g, mixed, n, heads)?;
    let out = g.linear(merged, p.get("out.weight")?, p.try_get("out.bias"))?;
    Ok(AttentionOutput { out, probs })
}

/// Per-key additive bias from a `[N, L]` mask.
pub fn mask_bias<T: Element>(g: &mut Graph<T>, mask: Var, kind: MaskBias) -> Result<Var> {
    match kind {
        MaskBias::Log => g.ln_eps(mask, T::of(MASK_EPS)),
        MaskBias::Hard => {
            let shifted = g.add_scalar(mask, -T::one())?;
            g.scale(shifted, T::of(HARD_PENALTY))
        }
    }
}

/// Self-attention over `x: [N, L, C]`; `mask: [N, L]` biases the keys when present.
pub fn masked_self_attention<T: Element>(
    g: &mut Graph<T>,
    p: &Scope<'_>,
    x: Var,
    mask: Option<Var>,
    kind: MaskBias,
    heads: usize,
) -> Result<AttentionOutput> {
    let (n, l, _) = tokens(g, x)?;
    let bias = match mask {
        Some(m) => {
            if g.shape(m) != [n, l] {
                return Err(dim_err!("mask {:?} does not cover {n} x {l} tokens", g.shape(m)));
            }
            Some(mask_bias(g, m, kind)?)
        }
        None => None,
    };
    attend(g, p, x, x, heads, bias)
}

/// Context tokens `[N, h*w, D]` from a `[N, c, h, w]` prompt latent.
pub fn prompt_context<T: Element>(g: &mut Graph<T>, p: &Scope<'_>, prompt_latent: Var) -> Result<Var> {
    let zc = p.child("zero_conv");
    let ctx = g.conv2d(prompt_latent, zc.get("weight")?, Some(zc.get("bias")?), 1, 0)?;
    let s = g.shape(ctx).to_vec();
    let flat = g.reshape(ctx, &[s[0], s[1], s[2] * s[3]])?;
    g.permute(flat, &[0, 2, 1])
}

/// Queries from `x: [N, L, C]`, keys and values from the zero-conv prompt context.
pub fn prompt_cross_attention<T: Element>(
    g: &mut Graph<T>,
    p: &Scope<'_>,
    x: Var,
    prompt_latent: Var,
    heads: usize,
) -> Result<AttentionOutput> {
    let ctx = prompt_context(g, p, prompt_latent)?;
    let (n, _, _) = tokens(g, x)?;
    let (cn, _, cw) = tokens(g, ctx)?;
    let want = g.shape(p.get("k.weight")?)[1];
    if cn != n || cw != want {
        return Err(dim_err!("context [{cn}, _, {cw}] does not fit {n} samples of width {want}"));
    }
    attend(g, p, x, ctx, heads, None)
}

/// Spatial attention map of one sample, normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Set when the raw map was constant; `values` are then all zero.
    pub degenerate: bool,
}

/// Per query: mean over heads of the largest weight any context token receives.
pub fn export_attention_map<T: Element>(
    probs: &Tensor<T>,
    sample: usize,
    heads: usize,
    height: usize,
    width: usize,
) -> Result<AttentionMap> {
    let &[b, lq, lk] = probs.shape() else {
        return Err(dim_err!("attention weights must be [B, Lq, Lk], got {:?}", probs.shape()));
    };
    if heads == 0 || b % heads != 0 || sample >= b / heads || lq != height * width {
        return Err(dim_err!("weights {:?} do not hold sample {sample} of a {height}x{width} grid", probs.shape()));
    }
    let mut raw = vec![0.0; lq];
    for h in 0..heads {
        let base = (sample * heads + h) * lq * lk;
        for (q, r) in raw.iter_mut().enumerate() {
            let row = &probs.data()[base + q * lk..base + (q + 1) * lk];
            *r += row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max) / heads as f64;
        }
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Ok(AttentionMap { height, width, values: vec![0.0; lq], degenerate: true });
    }
    let values = raw.iter().map(|v| (v - lo) / (hi - lo)).collect();
    Ok(AttentionMap { height, width, values, degenerate: false })
}
