//! Random prompts drawn from a ground-truth matte.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::prompt::{mask_bbox, BinaryMask, PromptKind, VisualPrompt};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PromptSampling {
    pub max_points: usize,
    /// Per-side box jitter as a fraction of the image extent.
    pub box_jitter: f64,
    /// Largest dilation or erosion radius applied to mask prompts, in cells.
    pub max_morph: usize,
}

impl Default for PromptSampling {
    fn default() -> Self {
        PromptSampling { max_points: 5, box_jitter: 0.05, max_morph: 3 }
    }
}

fn extent(alpha: &Tensor<f64>) -> Result<(usize, usize)> {
    match *alpha.shape() {
        [h, w] => Ok((h, w)),
        ref s => Err(crate::error::dim_err!("alpha must be [H, W], got {s:?}")),
    }
}

/// Threshold separating "inside" for point and mask prompts: 0.5, or half the peak of a translucent matte.
pub fn support_threshold(alpha: &Tensor<f64>) -> f64 {
    let peak = alpha.data().iter().copied().fold(0.0, f64::max);
    (0.5 * peak).min(0.5)
}

/// Cells with alpha strictly above the support threshold.
pub fn binarize(alpha: &Tensor<f64>) -> Result<BinaryMask> {
    let (h, w) = extent(alpha)?;
    let t = support_threshold(alpha);
    BinaryMask::new(w, h, alpha.data().iter().map(|&a| a > t).collect())
}

/// Square-window dilation (`radius > 0`) or erosion (`radius < 0`); the canvas border counts as background.
pub fn morph(mask: &BinaryMask, radius: isize) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let r = radius.unsigned_abs();
    if r == 0 {
        return mask.clone();
    }
    let dilate = radius > 0;
    let pass = |src: &dyn Fn(usize, usize) -> bool, horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (pos, len) = if horizontal { (x, w) } else { (y, h) };
                let lo = pos as isize - r as isize;
                let hi = pos + r;
                let mut any = false;
                let mut all = lo >= 0 && hi < len;
                for p in lo.max(0) as usize..=hi.min(len - 1) {
                    let v = if horizontal { src(p, y) } else { src(x, p) };
                    any |= v;
                    all &= v;
                }
                out[y * w + x] = if dilate { any } else { all };
            }
        }
        out
    };
    let first = pass(&|x, y| mask.get(x, y), true);
    let second = pass(&|x, y| first[y * w + x], false);
    BinaryMask::new(w, h, second).expect("extent preserved")
}

fn points<R: Rng + ?Sized>(alpha: &Tensor<f64>, cfg: &PromptSampling, rng: &mut R) -> Result<VisualPrompt> {
    let (h, w) = extent(alpha)?;
    let t = support_threshold(alpha);
    let inside: Vec<usize> = (0..h * w).filter(|&i| alpha.data()[i] > t).collect();
    if inside.is_empty() {
        return Err(Error::Generation("no pixel is inside the matte for a point prompt".into()));
    }
    let n = rng.random_range(1..=cfg.max_points.max(1));
    let pts = (0..n)
        .map(|_| {
            let &i = inside.choose(rng).expect("nonempty");
            [((i % w) as f64 + 0.5) / w as f64, ((i / w) as f64 + 0.5) / h as f64]
        })
        .collect();
    VisualPrompt::points(pts)
}

fn jittered_box<R: Rng + ?Sized>(alpha: &Tensor<f64>, cfg: &PromptSampling, rng: &mut R) -> Result<VisualPrompt> {
    let (h, w) = extent(alpha)?;
    let support = BinaryMask::new(w, h, alpha.data().iter().map(|&a| a > 0.0).collect())?;
    if support.count() == 0 {
        return Err(Error::Generation("empty matte has no bounding box".into()));
    }
    let tight = mask_bbox(&support)?;
    let mut side = |v: f64| {
        let j = if cfg.box_jitter > 0.0 { rng.random_range(-cfg.box_jitter..=cfg.box_jitter) } else { 0.0 };
        (v + j).clamp(0.0, 1.0)
    };
    let (mut x1, mut y1, mut x2, mut y2) = (side(tight.x1), side(tight.y1), side(tight.x2), side(tight.y2));
    if x2 <= x1 {
        (x1, x2) = (tight.x1, tight.x2);
    }
    if y2 <= y1 {
        (y1, y2) = (tight.y1, tight.y2);
    }
    VisualPrompt::bbox(x1, y1, x2, y2)
}

fn coarse_mask<R: Rng + ?Sized>(alpha: &Tensor<f64>, cfg: &PromptSampling, rng: &mut R) -> Result<VisualPrompt> {
    let base = binarize(alpha)?;
    if base.count() == 0 {
        return Err(Error::Generation("no pixel is inside the matte for a mask prompt".into()));
    }
    let r = rng.random_range(0..=cfg.max_morph) as isize;
    let signed = if rng.random_bool(0.5) { r } else { -r };
    // erosion can swallow thin shapes; back off toward the plain mask
    let mut radius = signed;
    loop {
        let m = morph(&base, radius);
        if m.count() > 0 {
            return VisualPrompt::mask(m);
        }
        radius += 1;
    }
}

/// Draws a prompt of `kind` from `alpha: [H, W]`.
pub fn sample_prompt_with<R: Rng + ?Sized>(
    alpha: &Tensor<f64>,
    kind: PromptKind,
    cfg: &PromptSampling,
    rng: &mut R,
) -> Result<VisualPrompt> {
    match kind {
        PromptKind::Point => points(alpha, cfg, rng),
        PromptKind::Box => jittered_box(alpha, cfg, rng),
        PromptKind::Mask => coarse_mask(alpha, cfg, rng),
    }
}

pub fn sample_prompt<R: Rng + ?Sized>(alpha: &Tensor<f64>, kind: PromptKind, rng: &mut R) -> Result<VisualPrompt> {
    sample_prompt_with(alpha, kind, &PromptSampling::default(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::shapes::{gen_foreground, ShapeKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disk(h: usize, w: usize, cx: f64, cy: f64, r: f64) -> Tensor<f64> {
        Tensor::from_fn([h, w], |i| {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            (r + 0.5 - ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()).clamp(0.0, 1.0)
        })
    }

    fn at(alpha: &Tensor<f64>, p: [f64; 2]) -> f64 {
        let (h, w) = (alpha.shape()[0], alpha.shape()[1]);
        let (x, y) = (((p[0] * w as f64) as usize).min(w - 1), ((p[1] * h as f64) as usize).min(h - 1));
        alpha.data()[y * w + x]
    }

    #[test]
    fn points_land_inside() {
        let alpha = disk(64, 64, 32.0, 32.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let VisualPrompt::Points(pts) = sample_prompt(&alpha, PromptKind::Point, &mut rng).unwrap() else { panic!() };
            assert!((1..=5).contains(&pts.len()));
            assert!(pts.iter().all(|&p| at(&alpha, p) > 0.5));
        }
    }

    #[test]
    fn glass_points_use_relative_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let f = gen_foreground(ShapeKind::Glass, 64, 64, &mut rng);
            let peak = f.layer.alpha.data().iter().copied().fold(0.0, f64::max);
            let VisualPrompt::Points(pts) = sample_prompt(&f.layer.alpha, PromptKind::Point, &mut rng).unwrap() else { panic!() };
            assert!(pts.iter().all(|&p| at(&f.layer.alpha, p) > 0.5 * peak));
        }
    }

    #[test]
    fn unjittered_box_is_tight() {
        let alpha = disk(48, 64, 20.0, 30.0, 7.0);
        let cfg = PromptSampling { box_jitter: 0.0, ..Default::default() };
        let support = BinaryMask::new(64, 48, alpha.data().iter().map(|&a| a > 0.0).collect()).unwrap();
        let VisualPrompt::Box(b) = sample_prompt_with(&alpha, PromptKind::Box, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap() else {
            panic!()
        };
        assert_eq!(b, mask_bbox(&support).unwrap());
    }

    #[test]
    fn jittered_box_moves_at_most_the_jitter() {
        let alpha = disk(64, 64, 32.0, 32.0, 9.0);
        let support = BinaryMask::new(64, 64, alpha.data().iter().map(|&a| a > 0.0).collect()).unwrap();
        let tight = mask_bbox(&support).unwrap().coords();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let VisualPrompt::Box(b) = sample_prompt(&alpha, PromptKind::Box, &mut rng).unwrap() else { panic!() };
            for (got, want) in b.coords().iter().zip(tight) {
                assert!((got - want).abs() <= 0.05 + 1e-12);
            }
        }
    }

    fn brute_dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            let r = r as isize;
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    xx >= 0 && yy >= 0 && xx < w && yy < h && mask.get(xx as usize, yy as usize)
                })
            })
        })
    }

    fn brute_erode(mask: &BinaryMask, r: usize) -> BinaryMask {
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            let r = r as isize;
            (-r..=r).all(|dy| {
                (-r..=r).all(|dx| {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    xx >= 0 && yy >= 0 && xx < w && yy < h && mask.get(xx as usize, yy as usize)
                })
            })
        })
    }

    fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let inter = a.cells().iter().zip(b.cells()).filter(|(x, y)| **x && **y).count();
        let union = a.cells().iter().zip(b.cells()).filter(|(x, y)| **x || **y).count();
        inter as f64 / union as f64
    }

    #[test]
    fn morphology_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = BinaryMask::from_fn(13, 9, |_, _| false);
            let cells: Vec<bool> = m.cells().iter().map(|_| rng.random_bool(0.4)).collect();
            let m = BinaryMask::new(13, 9, cells).unwrap();
            for r in 0..=3 {
                assert_eq!(morph(&m, r as isize), brute_dilate(&m, r));
                assert_eq!(morph(&m, -(r as isize)), brute_erode(&m, r));
            }
        }
    }

    #[test]
    fn dilated_mask_overlaps_matte() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // thin ring bands more than double under dilation, so only filled shapes are checked
        for kind in [ShapeKind::Disk, ShapeKind::Blob, ShapeKind::Glass] {
            for _ in 0..20 {
                let f = gen_foreground(kind, 64, 64, &mut rng);
                let base = binarize(&f.layer.alpha).unwrap();
                let dilated = brute_dilate(&base, 2);
                assert_eq!(morph(&base, 2), dilated);
                let score = iou(&dilated, &base);
                assert!((0.5..=1.0).contains(&score), "{kind}: iou {score}");
            }
        }
    }

    #[test]
    fn sampled_masks_stay_nonempty() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let thin = Tensor::from_fn([32, 32], |i| if i / 32 == 10 { 1.0 } else { 0.0 });
        for _ in 0..30 {
            let VisualPrompt::Mask(m) = sample_prompt(&thin, PromptKind::Mask, &mut rng).unwrap() else { panic!() };
            assert!(m.count() > 0);
        }
    }

    #[test]
    fn empty_matte_is_a_generation_error() {
        let zero = Tensor::zeros([16, 16]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in PromptKind::ALL {
            assert!(matches!(sample_prompt(&zero, kind, &mut rng), Err(Error::Generation(_))));
        }
    }
}
