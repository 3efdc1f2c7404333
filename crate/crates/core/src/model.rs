//! The full prompt-conditioned matting model: conditioning heads, codec and U-Net.

use crate::autograd::{Graph, Var};
use crate::codec::{decode, init_codec, CodecConfig, Encoder};
use crate::error::{arg_err, dim_err, Result};
use crate::params::{init_rng, Bindings, Init, ParamStore};
use crate::prompt::embedding::{BOX_WIDTH, POINT_WIDTH, SLOT_WIDTH};
use crate::prompt::mask::DEFAULT_SIGMA;
use crate::prompt::{
    attention_mask_build, coord_embedding, opacity_embedding, rasterize_prompt, CoordEmbedding, OpacityLabel,
    PromptKind, VisualPrompt,
};
use crate::tensor::{Element, Tensor};
use crate::unet::{init_unet, unet_forward, CrossRecord, UNetConfig, UNetInputs};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub unet: UNetConfig,
    pub codec: CodecConfig,
    /// Gaussian width of point attention masks, normalized units.
    pub mask_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { unet: UNetConfig::default(), codec: CodecConfig::default(), mask_sigma: DEFAULT_SIGMA }
    }
}

/// One image with its prompt.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub prompt: VisualPrompt,
    pub opacity: OpacityLabel,
}

/// Model-ready tensors for a batch of samples sharing one image size.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub images: Tensor<f32>,
    pub rasters: Tensor<f32>,
    pub opacity: Tensor<f32>,
    pub coords: Vec<CoordEmbedding>,
    /// `[N, h_l * w_l]` per U-Net level.
    pub masks: Vec<Tensor<f32>>,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }
}

pub struct ForwardOutput {
    /// `[N, 1, H, W]` in `[0, 1]`.
    pub alpha: Var,
    pub latent: Var,
    pub cross: Vec<CrossRecord>,
}

fn stack(parts: &[Tensor<f32>], shape: Vec<usize>) -> Result<Tensor<f32>> {
    Tensor::new(shape, parts.iter().flat_map(|t| t.data().iter().copied()).collect())
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.codec.validate()?;
        if !(self.mask_sigma > 0.0) {
            return Err(arg_err!("mask sigma must be positive, got {}", self.mask_sigma));
        }
        Ok(())
    }

    /// Image sides must be multiples of this.
    pub fn image_divisor(&self) -> usize {
        self.codec.downsample_factor * self.unet.spatial_divisor()
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut store = ParamStore::new();
        let mut rng = init_rng(seed);
        let mut init = Init::new(&mut store, &mut rng);
        {
            let mut cond = init.child("cond");
            cond.linear("f1", SLOT_WIDTH, self.unet.d_cond, true)?;
            cond.linear("f2_point", POINT_WIDTH, self.unet.d_cond, true)?;
            cond.linear("f2_box", BOX_WIDTH, self.unet.d_cond, true)?;
        }
        init_codec(&mut init.child("codec"), &self.codec)?;
        init_unet(&mut init.child("unet"), &self.unet, self.codec.latent_channels)?;
        Ok(store)
    }

    pub fn prepare(&self, samples: &[Sample]) -> Result<PreparedBatch> {
        let first = samples.first().ok_or_else(|| arg_err!("empty batch"))?;
        let &[3, h, w] = first.image.shape() else {
            return Err(dim_err!("image must be [3, H, W], got {:?}", first.image.shape()));
        };
        let div = self.image_divisor();
        if h % div != 0 || w % div != 0 {
            return Err(arg_err!("image {h}x{w} is not divisible by {div}"));
        }
        let f = self.codec.downsample_factor;
        let (lh, lw) = (h / f, w / f);
        let n = samples.len();
        let mut images = Vec::with_capacity(n);
        let mut rasters = Vec::with_capacity(n);
        let mut opacity = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        let mut levels: Vec<Vec<f32>> = vec![Vec::new(); self.unet.levels()];
        for s in samples {
            if s.image.shape() != [3, h, w] {
                return Err(dim_err!("batch mixes image sizes {:?} and [3, {h}, {w}]", s.image.shape()));
            }
            images.push(s.image.clone());
            rasters.push(rasterize_prompt(&s.prompt, h, w)?);
            opacity.push(Tensor::new([SLOT_WIDTH], opacity_embedding(s.opacity).into_iter().map(|v| v as f32).collect())?);
            coords.push(coord_embedding(&s.prompt)?);
            let base = attention_mask_build(&s.prompt, lh, lw, self.mask_sigma)?;
            for (l, dst) in levels.iter_mut().enumerate() {
                let m = if l == 0 { base.clone() } else { base.downsample(1 << l)? };
                dst.extend(m.values.iter().map(|&v| v as f32));
            }
        }
        let masks = levels
            .into_iter()
            .enumerate()
            .map(|(l, data)| Tensor::new([n, (lh >> l) * (lw >> l)], data))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedBatch {
            images: stack(&images, vec![n, 3, h, w])?,
            rasters: stack(&rasters, vec![n, 1, h, w])?,
            opacity: stack(&opacity, vec![n, SLOT_WIDTH])?,
            coords,
            masks,
        })
    }
}

/// `f1(E_opacity) + f2(E_coord)` for every sample, `[N, d_cond]`.
pub fn cond_forward<T: Element>(g: &mut Graph<T>, b: &Bindings, batch: &PreparedBatch) -> Result<Var> {
    let c = b.scope("cond");
    let op = g.constant(batch.opacity.cast());
    let e1 = g.linear(op, c.get("f1.weight")?, Some(c.get("f1.bias")?))?;
    let mut rows = Vec::with_capacity(batch.len());
    for coord in &batch.coords {
        let head = match coord.kind {
            PromptKind::Point => c.child("f2_point"),
            PromptKind::Box | PromptKind::Mask => c.child("f2_box"),
        };
        let x = g.constant(Tensor::new([1, coord.values.len()], coord.values.iter().map(|&v| T::of(v)).collect())?);
        rows.push(g.linear(x, head.get("weight")?, Some(head.get("bias")?))?);
    }
    let e2 = g.concat(&rows, 0)?;
    g.add(e1, e2)
}

/// Runs the whole model. `context` replaces the cross-attention prompt latent when given.
pub fn forward_with_context<T: Element>(
    g: &mut Graph<T>,
    b: &Bindings,
    cfg: &ModelConfig,
    batch: &PreparedBatch,
    context: Option<Var>,
) -> Result<ForwardOutput> {
    let codec = b.scope("codec");
    let enc = Encoder::new(&cfg.codec);
    let img = g.constant(batch.images.cast());
    let raster = g.constant(batch.rasters.cast());
    let latent_image = enc.encode(g, &codec, img)?;
    let latent_prompt = enc.encode(g, &codec, raster)?;
    let cond = cond_forward(g, b, batch)?;
    let masks = batch.masks.iter().map(|m| g.constant(m.cast())).collect();
    let inputs = UNetInputs {
        latent_image,
        latent_prompt,
        context: context.unwrap_or(latent_prompt),
        cond,
        masks,
    };
    let out = unet_forward(g, &b.scope("unet"), &cfg.unet, &inputs)?;
    let alpha = decode(g, &codec, &cfg.codec, out.latent)?;
    Ok(ForwardOutput { alpha, latent: out.latent, cross: out.cross })
}

pub fn forward<T: Element>(g: &mut Graph<T>, b: &Bindings, cfg: &ModelConfig, batch: &PreparedBatch) -> Result<ForwardOutput> {
    forward_with_context(g, b, cfg, batch, None)
}

/// Inference: alpha `[N, 1, H, W]` and the weights of the final cross-attention layer, if any.
pub fn predict(params: &ParamStore, cfg: &ModelConfig, batch: &PreparedBatch) -> Result<(Tensor<f32>, Option<(Tensor<f32>, usize, usize)>)> {
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let out = forward(&mut g, &b, cfg, batch)?;
    let cross = out.cross.last().map(|r| (g.value(r.probs).clone(), r.height, r.width));
    Ok((g.value(out.alpha).clone(), cross))
}
