//! Latent codec: images and prompt rasters in, low-resolution latents out, and back to alpha.

use crate::autograd::{Graph, Var};
use crate::error::{arg_err, dim_err, Result};
use crate::params::{Init, Scope};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    /// Area pooling followed by a constant affine map; no parameters.
    Fixed,
    /// Strided convolutions trained with the rest of the model.
    #[default]
    Learned,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub downsample_factor: usize,
    pub latent_channels: usize,
    pub mode: CodecMode,
    /// Width of the learned encoder's hidden convolutions.
    pub hidden_channels: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { downsample_factor: 4, latent_channels: 4, mode: CodecMode::Learned, hidden_channels: 16 }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4, 8].contains(&self.downsample_factor) {
            return Err(arg_err!("downsample factor must be 1, 2, 4 or 8, got {}", self.downsample_factor));
        }
        if self.latent_channels == 0 || self.hidden_channels == 0 {
            return Err(arg_err!("codec channel counts must be positive"));
        }
        Ok(())
    }

    fn stages(&self) -> usize {
        self.downsample_factor.trailing_zeros() as usize
    }
}

/// Constant `latent = A · rgb + b` of the fixed mode, `A: [latent, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedAffine {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FixedAffine {
    /// Maps `[0, 1]` RGB to `[-1, 1]` per channel, extra channels take the gray level.
    pub fn standard(latent_channels: usize) -> Self {
        let mut a = vec![0.0; latent_channels * 3];
        for o in 0..latent_channels {
            for c in 0..3 {
                a[o * 3 + c] = if o < 3 { if o == c { 2.0 } else { 0.0 } } else { 2.0 / 3.0 };
            }
        }
        FixedAffine { a, b: vec![-1.0; latent_channels] }
    }

    /// Identity on the first three channels, zero elsewhere.
    pub fn identity(latent_channels: usize) -> Self {
        let mut a = vec![0.0; latent_channels * 3];
        for o in 0..latent_channels.min(3) {
            a[o * 3 + o] = 1.0;
        }
        FixedAffine { a, b: vec![0.0; latent_channels] }
    }
}

pub fn init_codec(init: &mut Init<'_>, cfg: &CodecConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.mode == CodecMode::Learned {
        let mut enc = init.child("encoder");
        enc.conv("stem", 3, cfg.hidden_channels, 3)?;
        for s in 0..cfg.stages() {
            enc.conv(&format!("down{s}"), cfg.hidden_channels, cfg.hidden_channels, 3)?;
        }
        enc.conv("proj", cfg.hidden_channels, cfg.latent_channels, 1)?;
    }
    init.child("decoder").conv("head", cfg.latent_channels, 1, 3)
}

/// Image-to-latent map shared by the input image and the prompt raster.
pub struct Encoder<'a> {
    pub cfg: &'a CodecConfig,
    pub affine: FixedAffine,
}

impl<'a> Encoder<'a> {
    pub fn new(cfg: &'a CodecConfig) -> Self {
        Encoder { cfg, affine: FixedAffine::standard(cfg.latent_channels) }
    }

    /// `[N, 1|3, H, W]` to `[N, latent, H/f, W/f]`.
    pub fn encode<T: Element>(&self, g: &mut Graph<T>, p: &Scope<'_>, image: Var) -> Result<Var> {
        let s = g.shape(image).to_vec();
        if s.len() != 4 || !(s[1] == 1 || s[1] == 3) {
            return Err(dim_err!("codec input must be [N, 1 or 3, H, W], got {s:?}"));
        }
        let f = self.cfg.downsample_factor;
        if s[2] % f != 0 || s[3] % f != 0 {
            return Err(arg_err!("image {}x{} is not divisible by the codec factor {f}", s[2], s[3]));
        }
        let rgb = if s[1] == 1 { g.concat(&[image, image, image], 1)? } else { image };
        match self.cfg.mode {
            CodecMode::Fixed => {
                let pooled = if f == 1 { rgb } else { g.avg_pool(rgb, f)? };
                let lc = self.cfg.latent_channels;
                let w = g.constant(Tensor::new([lc, 3, 1, 1], self.affine.a.iter().map(|&v| T::of(v)).collect())?);
                let b = g.constant(Tensor::new([lc], self.affine.b.iter().map(|&v| T::of(v)).collect())?);
                g.conv2d(pooled, w, Some(b), 1, 0)
            }
            CodecMode::Learned => {
                let enc = p.child("encoder");
                let conv = |g: &mut Graph<T>, x: Var, name: &str, stride: usize, pad: usize| -> Result<Var> {
                    let c = enc.child(name);
                    g.conv2d(x, c.get("weight")?, Some(c.get("bias")?), stride, pad)
                };
                let stem = conv(g, rgb, "stem", 1, 1)?;
                let mut h = g.silu(stem)?;
                for st in 0..self.cfg.stages() {
                    let d = conv(g, h, &format!("down{st}"), 2, 1)?;
                    h = g.silu(d)?;
                }
                conv(g, h, "proj", 1, 0)
            }
        }
    }
}

/// `[N, latent, h, w]` to `[N, 1, h*f, w*f]` alpha in `[0, 1]`.
pub fn decode<T: Element>(g: &mut Graph<T>, p: &Scope<'_>, cfg: &CodecConfig, latent: Var) -> Result<Var> {
    let s = g.shape(latent).to_vec();
    if s.len() != 4 || s[1] != cfg.latent_channels {
        return Err(dim_err!("decoder expects [N, {}, h, w], got {s:?}", cfg.latent_channels));
    }
    let up = if cfg.downsample_factor == 1 { latent } else { g.upsample_nearest(latent, cfg.downsample_factor)? };
    let head = p.child("decoder").child("head");
    let logits = g.conv2d(up, head.get("weight")?, Some(head.get("bias")?), 1, 1)?;
    g.sigmoid(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init_rng, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(cfg: &CodecConfig, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = init_rng(seed);
        init_codec(&mut Init::new(&mut s, &mut rng), cfg).unwrap();
        s
    }

    fn fixed(f: usize, lc: usize) -> CodecConfig {
        CodecConfig { downsample_factor: f, latent_channels: lc, mode: CodecMode::Fixed, ..Default::default() }
    }

    fn encode_with(enc: &Encoder<'_>, params: &ParamStore, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let b = params.bind_frozen(&mut g);
        let x = g.constant(img.clone());
        let z = enc.encode(&mut g, &b.scope(""), x)?;
        Ok(g.value(z).clone())
    }

    #[test]
    fn fixed_constant_image_gives_constant_latent() {
        let cfg = fixed(4, 4);
        let params = store(&cfg, 0);
        let z = encode_with(&Encoder::new(&cfg), &params, &Tensor::full([1, 3, 8, 8], 0.25)).unwrap();
        assert_eq!(z.shape(), &[1, 4, 2, 2]);
        for (c, plane) in z.data().chunks(4).enumerate() {
            let want = if c < 3 { 2.0 * 0.25 - 1.0 } else { 3.0 * (2.0 / 3.0) * 0.25 - 1.0 };
            assert!(plane.iter().all(|&v| (v - want).abs() < 1e-6), "{c}: {plane:?}");
        }
    }

    #[test]
    fn fixed_identity_at_factor_one() {
        let cfg = fixed(1, 3);
        let params = store(&cfg, 0);
        let mut enc = Encoder::new(&cfg);
        enc.affine = FixedAffine::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::from_fn([1, 3, 8, 8], |_| rng.random::<f32>());
        assert_eq!(encode_with(&enc, &params, &img).unwrap(), img);
        // single channel input is replicated
        let gray = Tensor::from_fn([1, 1, 8, 8], |_| rng.random::<f32>());
        let z = encode_with(&enc, &params, &gray).unwrap();
        for c in 0..3 {
            assert_eq!(&z.data()[c * 64..(c + 1) * 64], gray.data());
        }
    }

    #[test]
    fn fixed_pooling_matches_double_loop_oracle() {
        let cfg = fixed(4, 4);
        let params = store(&cfg, 0);
        let enc = Encoder::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::from_fn([1, 3, 16, 16], |_| rng.random::<f32>());
        let z = encode_with(&enc, &params, &img).unwrap();
        for o in 0..4 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut acc = enc.affine.b[o];
                    for c in 0..3 {
                        let mut pool = 0.0;
                        for di in 0..4 {
                            for dj in 0..4 {
                                pool += img.data()[c * 256 + (4 * i + di) * 16 + 4 * j + dj] as f64;
                            }
                        }
                        acc += enc.affine.a[o * 3 + c] * pool / 16.0;
                    }
                    assert!((z.data()[o * 16 + i * 4 + j] as f64 - acc).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn fixed_pooling_is_linear() {
        let mut cfg = fixed(2, 3);
        cfg.latent_channels = 3;
        let params = store(&cfg, 0);
        let mut enc = Encoder::new(&cfg);
        enc.affine = FixedAffine::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn([1, 3, 8, 8], |_| rng.random::<f32>());
        let y = Tensor::from_fn([1, 3, 8, 8], |_| rng.random::<f32>());
        let (a, b) = (0.3f32, -1.7f32);
        let mix = Tensor::new([1, 3, 8, 8], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let (ex, ey, em) = (
            encode_with(&enc, &params, &x).unwrap(),
            encode_with(&enc, &params, &y).unwrap(),
            encode_with(&enc, &params, &mix).unwrap(),
        );
        for i in 0..em.len() {
            assert!((em.data()[i] - (a * ex.data()[i] + b * ey.data()[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn encode_rejects_bad_inputs() {
        let cfg = CodecConfig::default();
        let params = store(&cfg, 0);
        let enc = Encoder::new(&cfg);
        assert!(matches!(encode_with(&enc, &params, &Tensor::zeros([1, 3, 10, 8])), Err(crate::Error::Argument(_))));
        assert!(matches!(encode_with(&enc, &params, &Tensor::zeros([1, 2, 8, 8])), Err(crate::Error::Dimension(_))));
        assert!(CodecConfig { downsample_factor: 3, ..Default::default() }.validate().is_err());
    }

    fn decode_with(cfg: &CodecConfig, params: &ParamStore, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let b = params.bind_frozen(&mut g);
        let x = g.constant(z.clone());
        let a = decode(&mut g, &b.scope(""), cfg, x)?;
        Ok(g.value(a).clone())
    }

    #[test]
    fn decoder_examples() {
        let cfg = CodecConfig::default();
        let mut params = store(&cfg, 4);
        for name in ["decoder.head.weight", "decoder.head.bias"] {
            let t = params.get_mut(name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let out = decode_with(&cfg, &params, &Tensor::zeros([1, 4, 4, 4])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 16, 16]);
        assert!(out.data().iter().all(|&v| v == 0.5));
        assert!(matches!(decode_with(&cfg, &params, &Tensor::zeros([1, 3, 4, 4])), Err(crate::Error::Dimension(_))));

        // identity head: center tap of channel 0
        let cfg1 = CodecConfig { downsample_factor: 1, ..Default::default() };
        let mut params = store(&cfg1, 5);
        *params.get_mut("decoder.head.weight").unwrap() = Tensor::from_fn([1, 4, 3, 3], |i| if i == 4 { 1.0 } else { 0.0 });
        *params.get_mut("decoder.head.bias").unwrap() = Tensor::zeros([1]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = Tensor::from_fn([1, 4, 6, 6], |_| rng.random_range(-3.0..3.0));
        let out = decode_with(&cfg1, &params, &z).unwrap();
        let mut pairs: Vec<(f32, f32)> = z.data()[..36].iter().copied().zip(out.data().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn roundtrip_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for f in [1, 2, 4, 8] {
            for mode in [CodecMode::Fixed, CodecMode::Learned] {
                let cfg = CodecConfig { downsample_factor: f, mode, ..Default::default() };
                let params = store(&cfg, f as u64);
                let img = Tensor::from_fn([2, 3, 16, 24], |_| rng.random::<f32>());
                let z = encode_with(&Encoder::new(&cfg), &params, &img).unwrap();
                assert_eq!(z.shape(), &[2, 4, 16 / f, 24 / f]);
                let a = decode_with(&cfg, &params, &z).unwrap();
                assert_eq!(a.shape(), &[2, 1, 16, 24]);
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
