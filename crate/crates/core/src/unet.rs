//! Miniature conditional U-Net operating on concatenated image and prompt latents.

use crate::attention::{
    init_cross_attention, init_self_attention, masked_self_attention, prompt_cross_attention, AttentionPlacement,
    BlockFamily, MaskBias,
};
use crate::autograd::{Graph, Var};
use crate::error::{arg_err, dim_err, Result};
use crate::params::{Init, Scope};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub channel_mult: Vec<usize>,
    pub res_blocks: usize,
    pub heads: usize,
    pub d_cond: usize,
    pub groups: usize,
    /// Width of the cross-attention context produced by the zero convolution.
    pub context_width: usize,
    pub placement: AttentionPlacement,
    pub mask_bias: MaskBias,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            base_channels: 32,
            channel_mult: vec![1, 2, 4],
            res_blocks: 2,
            heads: 4,
            d_cond: 256,
            groups: 8,
            context_width: 64,
            placement: AttentionPlacement::default(),
            mask_bias: MaskBias::Log,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_mult.is_empty() || self.channel_mult.contains(&0) {
            return Err(arg_err!("U-Net needs at least one level with positive multipliers"));
        }
        if self.base_channels == 0 || self.res_blocks == 0 || self.d_cond == 0 || self.context_width == 0 {
            return Err(arg_err!("U-Net widths and block counts must be positive"));
        }
        for &m in &self.channel_mult {
            let c = self.base_channels * m;
            if self.heads == 0 || c % self.heads != 0 {
                return Err(arg_err!("width {c} is not divisible by {} heads", self.heads));
            }
            if self.groups == 0 || c % self.groups != 0 {
                return Err(arg_err!("width {c} is not divisible by {} groups", self.groups));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.channel_mult.len()
    }

    /// Latent extents must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.levels() - 1)
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels * self.channel_mult[level]
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Stage {
    Res { name: String, cin: usize, cout: usize, concat_skip: bool, push_skip: bool },
    SelfAttn { name: String, channels: usize },
    CrossAttn { name: String, channels: usize },
    Down { name: String, channels: usize },
    Up { name: String, channels: usize },
}

/// Linear layer sequence shared by initialization and the forward pass.
fn plan(cfg: &UNetConfig) -> Vec<Stage> {
    let mut stages = Vec::new();
    let mut skips = vec![];
    let mut ch = cfg.width(0);
    let attn = |stages: &mut Vec<Stage>, prefix: &str, family: BlockFamily, c: usize| {
        if cfg.placement.self_at(family) {
            stages.push(Stage::SelfAttn { name: format!("{prefix}.self_attn"), channels: c });
        }
        if cfg.placement.cross_at(family) {
            stages.push(Stage::CrossAttn { name: format!("{prefix}.cross_attn"), channels: c });
        }
    };
    for level in 0..cfg.levels() {
        let c = cfg.width(level);
        for r in 0..cfg.res_blocks {
            let name = format!("down{level}.res{r}");
            stages.push(Stage::Res { name: name.clone(), cin: ch, cout: c, concat_skip: false, push_skip: true });
            ch = c;
            attn(&mut stages, &name, BlockFamily::Down, c);
            skips.push(c);
        }
        if level + 1 < cfg.levels() {
            stages.push(Stage::Down { name: format!("down{level}.downsample"), channels: c });
        }
    }
    stages.push(Stage::Res { name: "mid.res0".into(), cin: ch, cout: ch, concat_skip: false, push_skip: false });
    attn(&mut stages, "mid", BlockFamily::Mid, ch);
    stages.push(Stage::Res { name: "mid.res1".into(), cin: ch, cout: ch, concat_skip: false, push_skip: false });
    for level in (0..cfg.levels()).rev() {
        let c = cfg.width(level);
        for r in 0..cfg.res_blocks {
            let name = format!("up{level}.res{r}");
            let skip = skips.pop().expect("balanced skips");
            stages.push(Stage::Res { name: name.clone(), cin: ch + skip, cout: c, concat_skip: true, push_skip: false });
            ch = c;
            attn(&mut stages, &name, BlockFamily::Up, c);
        }
        if level > 0 {
            stages.push(Stage::Up { name: format!("up{level}.upsample"), channels: c });
        }
    }
    stages
}

/// Widens `[O, I, k, k]` to `[O, 2I, k, k]` by repeating the input-channel axis.
pub fn duplicate_input_conv(w: &Tensor<f32>) -> Result<Tensor<f32>> {
    let &[o, i, kh, kw] = w.shape() else {
        return Err(dim_err!("conv weight must be [O, I, k, k], got {:?}", w.shape()));
    };
    let block = i * kh * kw;
    let mut data = Vec::with_capacity(2 * w.len());
    for row in w.data().chunks_exact(block) {
        data.extend_from_slice(row);
        data.extend_from_slice(row);
    }
    Tensor::new([o, 2 * i, kh, kw], data)
}

/// Registers all U-Net parameters under `init`'s prefix.
pub fn init_unet(init: &mut Init<'_>, cfg: &UNetConfig, latent_channels: usize) -> Result<()> {
    cfg.validate()?;
    let c0 = cfg.width(0);
    {
        let mut conv_in = init.child("conv_in");
        let single = conv_in.sample_uniform(&[c0, latent_channels, 3, 3], latent_channels * 9);
        conv_in.tensor("weight", duplicate_input_conv(&single)?)?;
        conv_in.uniform("bias", &[c0], latent_channels * 9)?;
    }
    for stage in plan(cfg) {
        match stage {
            Stage::Res { name, cin, cout, .. } => {
                let mut b = init.child(&name);
                b.norm("norm1", cin)?;
                b.conv("conv1", cin, cout, 3)?;
                b.linear("cond", cfg.d_cond, cout, true)?;
                b.norm("norm2", cout)?;
                b.conv("conv2", cout, cout, 3)?;
                if cin != cout {
                    b.conv("skip", cin, cout, 1)?;
                }
            }
            Stage::SelfAttn { name, channels } => {
                let mut b = init.child(&name);
                b.norm("norm", channels)?;
                init_self_attention(&mut b, channels)?;
            }
            Stage::CrossAttn { name, channels } => {
                let mut b = init.child(&name);
                b.norm("norm", channels)?;
                init_cross_attention(&mut b, channels, cfg.context_width, latent_channels)?;
            }
            Stage::Down { name, channels } | Stage::Up { name, channels } => {
                init.conv(&format!("{name}.conv"), channels, channels, 3)?;
            }
        }
    }
    init.norm("norm_out", c0)?;
    init.conv("conv_out", c0, latent_channels, 3)
}

/// Weights of one cross-attention layer from the last forward pass.
#[derive(Clone, Copy, Debug)]
pub struct CrossRecord {
    pub probs: Var,
    pub height: usize,
    pub width: usize,
}

pub struct UNetOutput {
    /// `[N, latent, h, w]`
    pub latent: Var,
    /// In execution order; the last entry is the final cross-attention layer.
    pub cross: Vec<CrossRecord>,
}

pub struct UNetInputs {
    /// `[N, latent, h, w]`
    pub latent_image: Var,
    /// `[N, latent, h, w]`, concatenated to the input.
    pub latent_prompt: Var,
    /// Prompt latent for the cross-attention context; usually the same var as `latent_prompt`.
    pub context: Var,
    /// `[N, d_cond]`
    pub cond: Var,
    /// `[N, h_l * w_l]` per level, level 0 at latent resolution.
    pub masks: Vec<Var>,
}

fn to_tokens<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
    g.permute(flat, &[0, 2, 1])
}

fn from_tokens<T: Element>(g: &mut Graph<T>, t: Var, shape: &[usize]) -> Result<Var> {
    let p = g.permute(t, &[0, 2, 1])?;
    g.reshape(p, shape)
}

fn conv<T: Element>(g: &mut Graph<T>, p: &Scope<'_>, x: Var, stride: usize, pad: usize) -> Result<Var> {
    g.conv2d(x, p.get("weight")?, Some(p.get("bias")?), stride, pad)
}

fn norm<T: Element>(g: &mut Graph<T>, p: &Scope<'_>, x: Var, groups: usize, act: bool) -> Result<Var> {
    let (s, t) = (p.get("scale")?, p.get("shift")?);
    if act {
        g.norm_act(x, groups, s, t)
    } else {
        g.group_norm(x, groups, s, t)
    }
}

pub fn unet_forward<T: Element>(
    g: &mut Graph<T>,
    p: &Scope<'_>,
    cfg: &UNetConfig,
    inputs: &UNetInputs,
) -> Result<UNetOutput> {
    let si = g.shape(inputs.latent_image).to_vec();
    if si.len() != 4 || g.shape(inputs.latent_prompt) != si.as_slice() {
        return Err(dim_err!(
            "image latent {si:?} and prompt latent {:?} must share [N, C, h, w]",
            g.shape(inputs.latent_prompt)
        ));
    }
    let (n, h0, w0) = (si[0], si[2], si[3]);
    let div = cfg.spatial_divisor();
    if h0 % div != 0 || w0 % div != 0 {
        return Err(arg_err!("latent {h0}x{w0} is not divisible by {div}"));
    }
    if g.shape(inputs.cond) != [n, cfg.d_cond] {
        return Err(dim_err!("cond {:?}, expected [{n}, {}]", g.shape(inputs.cond), cfg.d_cond));
    }
    if inputs.masks.len() != cfg.levels() {
        return Err(dim_err!("{} masks for {} levels", inputs.masks.len(), cfg.levels()));
    }
    for (l, &m) in inputs.masks.iter().enumerate() {
        let want = [n, (h0 >> l) * (w0 >> l)];
        if g.shape(m) != want {
            return Err(dim_err!("level {l} mask {:?}, expected {want:?}", g.shape(m)));
        }
    }

    let cond_act = g.silu(inputs.cond)?;
    let x = g.concat(&[inputs.latent_image, inputs.latent_prompt], 1)?;
    let mut h = conv(g, &p.child("conv_in"), x, 1, 1)?;
    let mut level = 0;
    let mut skips: Vec<Var> = Vec::new();
    let mut cross = Vec::new();
    for stage in plan(cfg) {
        match stage {
            Stage::Res { name, cin, cout, concat_skip, push_skip } => {
                let b = p.child(&name);
                let input = if concat_skip {
                    let s = skips.pop().expect("balanced skips");
                    g.concat(&[h, s], 1)?
                } else {
                    h
                };
                let a = norm(g, &b.child("norm1"), input, cfg.groups, true)?;
                let c1 = conv(g, &b.child("conv1"), a, 1, 1)?;
                let shift = g.linear(cond_act, b.get("cond.weight")?, Some(b.get("cond.bias")?))?;
                let c1 = g.add_channel(c1, shift)?;
                let a2 = norm(g, &b.child("norm2"), c1, cfg.groups, true)?;
                let c2 = conv(g, &b.child("conv2"), a2, 1, 1)?;
                let residual = if cin != cout { conv(g, &b.child("skip"), input, 1, 0)? } else { input };
                h = g.add(c2, residual)?;
                if push_skip {
                    skips.push(h);
                }
            }
            Stage::SelfAttn { name, .. } => {
                let b = p.child(&name);
                let shape = g.shape(h).to_vec();
                let normed = norm(g, &b.child("norm"), h, cfg.groups, false)?;
                let tokens = to_tokens(g, normed)?;
                let out = masked_self_attention(g, &b, tokens, Some(inputs.masks[level]), cfg.mask_bias, cfg.heads)?;
                let back = from_tokens(g, out.out, &shape)?;
                h = g.add(h, back)?;
            }
            Stage::CrossAttn { name, .. } => {
                let b = p.child(&name);
                let shape = g.shape(h).to_vec();
                let normed = norm(g, &b.child("norm"), h, cfg.groups, false)?;
                let tokens = to_tokens(g, normed)?;
                let out = prompt_cross_attention(g, &b, tokens, inputs.context, cfg.heads)?;
                cross.push(CrossRecord { probs: out.probs, height: shape[2], width: shape[3] });
                let back = from_tokens(g, out.out, &shape)?;
                h = g.add(h, back)?;
            }
            Stage::Down { name, .. } => {
                h = conv(g, &p.child(&name).child("conv"), h, 2, 1)?;
                level += 1;
            }
            Stage::Up { name, .. } => {
                let up = g.upsample_nearest(h, 2)?;
                h = conv(g, &p.child(&name).child("conv"), up, 1, 1)?;
                level -= 1;
            }
        }
    }
    let a = norm(g, &p.child("norm_out"), h, cfg.groups, true)?;
    let latent = conv(g, &p.child("conv_out"), a, 1, 1)?;
    Ok(UNetOutput { latent, cross })
}
