//! Synthetic matting scenes: composited shapes with exact alpha, prompts and duplicated distractors.

pub mod dataset;
pub mod prompts;
pub mod shapes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::prompt::{OpacityLabel, PromptKind, VisualPrompt};
use crate::tensor::Tensor;

pub use dataset::{list_scenes, load_scene, read_manifest, write_dataset, write_scene, Manifest, SceneMeta, SceneRecord};
pub use prompts::{binarize, morph, sample_prompt, sample_prompt_with, support_threshold, PromptSampling};
pub use shapes::{gen_foreground, Foreground, Layer, ShapeKind, ShapeSpec};

/// Noise amplitude added to backgrounds.
pub const BACKGROUND_NOISE: f64 = 0.03;
/// Placement attempts for a distractor before giving up on duplication.
pub const PLACEMENT_ATTEMPTS: usize = 20;
/// Smallest mean channel difference between a foreground color and its background.
const MIN_CONTRAST: f64 = 0.2;

/// Probabilities of drawing each prompt kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptMix {
    pub point: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub mask: f64,
}

impl Default for PromptMix {
    fn default() -> Self {
        PromptMix { point: 1.0 / 3.0, bbox: 1.0 / 3.0, mask: 1.0 / 3.0 }
    }
}

impl PromptMix {
    pub fn only(kind: PromptKind) -> Self {
        let mut m = PromptMix { point: 0.0, bbox: 0.0, mask: 0.0 };
        match kind {
            PromptKind::Point => m.point = 1.0,
            PromptKind::Box => m.bbox = 1.0,
            PromptKind::Mask => m.mask = 1.0,
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let p = [self.point, self.bbox, self.mask];
        if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(arg_err!("prompt probabilities must be non-negative, got {p:?}"));
        }
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(arg_err!("prompt probabilities must sum to 1, got {p:?}"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PromptKind {
        let u: f64 = rng.random();
        if u < self.point {
            PromptKind::Point
        } else if u < self.point + self.bbox {
            PromptKind::Box
        } else {
            PromptKind::Mask
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub duplicate_prob: f64,
    pub prompt_mix: PromptMix,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { height: 64, width: 64, duplicate_prob: 0.5, prompt_mix: PromptMix::default() }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(arg_err!("scenes must be at least 8x8, got {}x{}", self.height, self.width));
        }
        if !(0.0..=1.0).contains(&self.duplicate_prob) {
            return Err(arg_err!("duplicate probability {} outside [0, 1]", self.duplicate_prob));
        }
        self.prompt_mix.validate()
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f64>,
    /// `[H, W]`, prompted instance only.
    pub gt_alpha: Tensor<f64>,
    pub prompt: VisualPrompt,
    pub opacity: OpacityLabel,
    pub kind: ShapeKind,
    pub distractor_count: usize,
    /// Alpha of the unprompted copy, when one was placed.
    pub distractor_alpha: Option<Tensor<f64>>,
}

/// Back-to-front `I = a F + (1 - a) B` over every layer.
pub fn composite(background: &Tensor<f64>, layers: &[&Layer]) -> Result<Tensor<f64>> {
    let &[3, h, w] = background.shape() else {
        return Err(dim_err!("background must be [3, H, W], got {:?}", background.shape()));
    };
    let mut out = background.clone();
    let plane = h * w;
    for layer in layers {
        if layer.rgb.shape() != [3, h, w] || layer.alpha.shape() != [h, w] {
            return Err(dim_err!(
                "layer {:?}/{:?} does not match background [3, {h}, {w}]",
                layer.rgb.shape(),
                layer.alpha.shape()
            ));
        }
        let (a, f) = (layer.alpha.data(), layer.rgb.data());
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ai = a[i % plane];
            *v = ai * f[i] + (1.0 - ai) * *v;
        }
    }
    Ok(out)
}

/// Two-color linear gradient in a random direction plus uniform noise, clamped to `[0, 1]`.
pub fn gen_background<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Tensor<f64> {
    let c0: [f64; 3] = [(); 3].map(|_| rng.random());
    let c1: [f64; 3] = [(); 3].map(|_| rng.random());
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    // project pixel centers and rescale to [0, 1]
    let corners = [(0.0, 0.0), (width as f64, 0.0), (0.0, height as f64), (width as f64, height as f64)];
    let proj: Vec<f64> = corners.iter().map(|&(x, y)| x * dx + y * dy).collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; 3 * height * width];
    for y in 0..height {
        for x in 0..width {
            let t = ((x as f64 + 0.5) * dx + (y as f64 + 0.5) * dy - lo) / (hi - lo);
            for c in 0..3 {
                let noise = rng.random_range(-BACKGROUND_NOISE..=BACKGROUND_NOISE);
                out[(c * height + y) * width + x] = (c0[c] * (1.0 - t) + c1[c] * t + noise).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new([3, height, width], out).expect("extent matches")
}

fn mean_color(img: &Tensor<f64>) -> [f64; 3] {
    let plane = img.len() / 3;
    [0, 1, 2].map(|c| img.data()[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64)
}

fn contrast(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 3.0
}

/// An integer-pixel offset placing a copy of `spec` at `center` without touching the original.
fn place_copy<R: Rng + ?Sized>(spec: &ShapeSpec, center: (f64, f64), h: usize, w: usize, rng: &mut R) -> Option<(f64, f64)> {
    let e = spec.extent();
    let gap = 2.0 * e + 1.0;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let (x, y) = shapes::random_center(e, h, w, rng);
        let (ox, oy) = ((x - center.0).round(), (y - center.1).round());
        let (cx, cy) = (center.0 + ox, center.1 + oy);
        let inside = cx >= e && cy >= e && cx <= w as f64 - e && cy <= h as f64 - e;
        if inside && (ox * ox + oy * oy).sqrt() > gap {
            return Some((cx, cy));
        }
    }
    None
}

/// Generates one scene; prompts that cannot be drawn cause the whole scene to be redrawn.
pub fn make_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut last = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let background = gen_background(h, w, rng);
        let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
        let mut fg = gen_foreground(kind, h, w, rng);
        let bg_mean = mean_color(&background);
        for _ in 0..PLACEMENT_ATTEMPTS {
            if contrast(fg.spec.color, bg_mean) >= MIN_CONTRAST {
                break;
            }
            fg.spec.color = [(); 3].map(|_| rng.random());
            if kind == ShapeKind::Glass {
                fg.spec.color = fg.spec.color.map(|c| 0.6 + 0.4 * c);
            }
            fg.layer = fg.spec.render(fg.center, h, w);
        }
        let distractor = if rng.random_bool(cfg.duplicate_prob) {
            place_copy(&fg.spec, fg.center, h, w, rng).map(|c| fg.spec.render(c, h, w))
        } else {
            None
        };
        let prompt_kind = cfg.prompt_mix.sample(rng);
        let prompt = match sample_prompt(&fg.layer.alpha, prompt_kind, rng) {
            Ok(p) => p,
            Err(e @ Error::Generation(_)) => {
                last = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut layers = vec![&fg.layer];
        layers.extend(distractor.as_ref());
        let image = composite(&background, &layers)?;
        return Ok(SynthScene {
            image,
            gt_alpha: fg.layer.alpha.clone(),
            prompt,
            opacity: kind.opacity(),
            kind,
            distractor_count: distractor.is_some() as usize,
            distractor_alpha: distractor.map(|d| d.alpha),
        });
    }
    Err(last.unwrap_or_else(|| Error::Generation("scene generation kept failing".into())))
}

/// Seed of scene `index` in a dataset seeded with `seed`.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn make_scene_seeded(seed: u64, cfg: &SceneConfig) -> Result<SynthScene> {
    make_scene(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_layer(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Layer {
        Layer {
            rgb: Tensor::from_fn([3, h, w], |_| rng.random()),
            alpha: Tensor::from_fn([h, w], |_| rng.random()),
        }
    }

    #[test]
    fn composite_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bg = Tensor::from_fn([3, 5, 4], |_| rng.random());
        let mut fg = random_layer(&mut rng, 5, 4);
        fg.alpha = Tensor::full([5, 4], 1.0);
        assert_eq!(composite(&bg, &[&fg]).unwrap(), fg.rgb);
        fg.alpha = Tensor::zeros([5, 4]);
        assert_eq!(composite(&bg, &[&fg]).unwrap(), bg);
        let small = random_layer(&mut rng, 4, 4);
        assert!(matches!(composite(&bg, &[&small]), Err(Error::Dimension(_))));
    }

    #[test]
    fn composite_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w) = (7, 9);
        let bg = Tensor::from_fn([3, h, w], |_| rng.random());
        let (l1, l2) = (random_layer(&mut rng, h, w), random_layer(&mut rng, h, w));
        let got = composite(&bg, &[&l1, &l2]).unwrap();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let i = (c * h + y) * w + x;
                    let p = y * w + x;
                    let mut v = bg.data()[i];
                    v = l1.alpha.data()[p] * l1.rgb.data()[i] + (1.0 - l1.alpha.data()[p]) * v;
                    v = l2.alpha.data()[p] * l2.rgb.data()[i] + (1.0 - l2.alpha.data()[p]) * v;
                    assert!((got.data()[i] - v).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn no_duplication_without_probability() {
        let cfg = SceneConfig { duplicate_prob: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = make_scene(&mut rng, &cfg).unwrap();
            assert_eq!(s.distractor_count, 0);
            assert!(s.distractor_alpha.is_none());
        }
    }

    #[test]
    fn certain_duplication_places_disjoint_copies() {
        let cfg = SceneConfig { duplicate_prob: 1.0, ..Default::default() };
        let mut fallbacks = 0;
        for i in 0..200 {
            let s = make_scene_seeded(scene_seed(4, i), &cfg).unwrap();
            match &s.distractor_alpha {
                None => fallbacks += 1,
                Some(d) => {
                    assert_eq!(s.distractor_count, 1);
                    // the matte never covers distractor pixels
                    for (g, dv) in s.gt_alpha.data().iter().zip(d.data()) {
                        if *dv > 0.0 {
                            assert_eq!(*g, 0.0);
                        }
                    }
                    let mass = |t: &Tensor<f64>| t.data().iter().sum::<f64>();
                    assert!((mass(d) - mass(&s.gt_alpha)).abs() < 1e-9);
                }
            }
        }
        assert!(fallbacks < 10, "{fallbacks} fallbacks");
    }

    #[test]
    fn duplication_frequency_tracks_probability() {
        let cfg = SceneConfig::default();
        let dup = (0..1000).filter(|&i| make_scene_seeded(scene_seed(5, i), &cfg).unwrap().distractor_count == 1).count();
        assert!((450..=550).contains(&dup), "{dup} duplicated scenes");
    }

    #[test]
    fn scenes_reconstruct_and_prompts_hit_the_matte() {
        let cfg = SceneConfig { duplicate_prob: 0.5, ..Default::default() };
        for i in 0..60 {
            let seed = scene_seed(6, i);
            let s = make_scene_seeded(seed, &cfg).unwrap();
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let (h, w) = (cfg.height, cfg.width);
            let at = |p: [f64; 2]| s.gt_alpha.data()[((p[1] * h as f64) as usize).min(h - 1) * w + ((p[0] * w as f64) as usize).min(w - 1)];
            match &s.prompt {
                VisualPrompt::Points(pts) => assert!(pts.iter().all(|&p| at(p) > support_threshold(&s.gt_alpha))),
                VisualPrompt::Box(b) => {
                    let hit = (0..h * w).any(|i| {
                        let (x, y) = (((i % w) as f64 + 0.5) / w as f64, ((i / w) as f64 + 0.5) / h as f64);
                        s.gt_alpha.data()[i] > 0.0 && x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2
                    });
                    assert!(hit);
                }
                VisualPrompt::Mask(m) => {
                    assert!((0..h * w).any(|i| m.cells()[i] && s.gt_alpha.data()[i] > 0.0));
                }
            }
            assert_eq!(s.opacity, s.kind.opacity());
            // regenerating the scene reproduces it
            let again = make_scene_seeded(seed, &cfg).unwrap();
            assert_eq!(again.image, s.image);
            assert_eq!(again.prompt, s.prompt);
        }
    }

    #[test]
    fn image_is_the_composite_of_its_layers() {
        // replay the generator by hand for a fixed seed
        let cfg = SceneConfig { duplicate_prob: 0.0, ..Default::default() };
        let s = make_scene_seeded(77, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let bg = gen_background(64, 64, &mut rng);
        let fg_rgb = {
            // the foreground color is constant; read it off a fully inside pixel
            let i = s.gt_alpha.data().iter().position(|&a| a == s.gt_alpha.data().iter().copied().fold(0.0, f64::max)).unwrap();
            let peak = s.gt_alpha.data()[i];
            [0, 1, 2].map(|c| (s.image.data()[c * 4096 + i] - (1.0 - peak) * bg.data()[c * 4096 + i]) / peak)
        };
        let layer = Layer { rgb: Tensor::from_fn([3, 64, 64], |i| fg_rgb[i / 4096]), alpha: s.gt_alpha.clone() };
        assert!(composite(&bg, &[&layer]).unwrap().max_abs_diff(&s.image).unwrap() < 1e-6);
    }

    #[test]
    fn prompt_mix_validation_and_sampling() {
        assert!(PromptMix::default().validate().is_ok());
        assert!(PromptMix { point: 0.5, bbox: 0.5, mask: 0.5 }.validate().is_err());
        assert!(PromptMix { point: -0.5, bbox: 1.0, mask: 0.5 }.validate().is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in PromptKind::ALL {
            assert!((0..50).all(|_| PromptMix::only(kind).sample(&mut rng) == kind));
        }
        assert!(SceneConfig { duplicate_prob: 1.5, ..Default::default() }.validate().is_err());
    }
}
