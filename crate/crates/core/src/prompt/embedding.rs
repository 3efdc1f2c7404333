//! Sinusoidal coordinate and opacity embeddings.

use super::{Bbox, BinaryMask, OpacityLabel, PromptKind, VisualPrompt};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::tensor::Tensor;

/// Width of the point coordinate embedding.
pub const POINT_WIDTH: usize = 1680;
/// Width of the box (and mask) coordinate embedding.
pub const BOX_WIDTH: usize = 1280;
/// Per-number width of a box coordinate and of the opacity embedding.
pub const SLOT_WIDTH: usize = 320;
/// Normalized values are multiplied by this before encoding.
pub const COORD_SCALE: f64 = 1000.0;

pub fn sinusoidal_encode(value: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(arg_err!("sinusoidal dimension must be even and at least 2, got {dim}"));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let omega = if half == 1 { 1.0 } else { (-(10000f64.ln()) * i as f64 / (half - 1) as f64).exp() };
        let (s, c) = (value * omega).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    Ok(out)
}

/// Minimal zero padding `P` making `2N + P` divide 1680, and the resulting per-scalar width.
pub fn point_pad(n: usize) -> Result<(usize, usize)> {
    if !(1..=POINT_WIDTH / 2).contains(&n) {
        return Err(arg_err!("point count must lie in [1, {}], got {n}", POINT_WIDTH / 2));
    }
    let p = (0..).find(|p| POINT_WIDTH % (2 * n + p) == 0).expect("1680 divides itself");
    Ok((p, POINT_WIDTH / (2 * n + p)))
}

/// Tight box over the set cells, using cell edges so single cells keep a positive extent.
pub fn mask_bbox(mask: &BinaryMask) -> Result<Bbox> {
    let (w, h) = (mask.width(), mask.height());
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    let (x0, y0, x1, y1) = bounds.ok_or_else(|| arg_err!("bounding box of an empty mask"))?;
    Ok(Bbox {
        x1: x0 as f64 / w as f64,
        y1: y0 as f64 / h as f64,
        x2: (x1 + 1) as f64 / w as f64,
        y2: (y1 + 1) as f64 / h as f64,
    })
}

pub fn opacity_embedding(o: OpacityLabel) -> Vec<f64> {
    sinusoidal_encode(o.value() as f64 * COORD_SCALE, SLOT_WIDTH).expect("even width")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordEmbedding {
    pub values: Vec<f64>,
    pub kind: PromptKind,
    /// Zeros appended to the point coordinate list (0 for boxes).
    pub pad: usize,
    pub per_scalar_dim: usize,
}

/// Encodes `value` into `dim` entries; odd widths encode `dim + 1` and drop the final cosine.
fn encode_slot(value: f64, dim: usize, out: &mut Vec<f64>) {
    let even = dim + dim % 2;
    let mut v = sinusoidal_encode(value * COORD_SCALE, even).expect("even width");
    v.truncate(dim);
    out.extend(v);
}

fn box_values(b: &Bbox) -> Vec<f64> {
    let mut out = Vec::with_capacity(BOX_WIDTH);
    for v in b.coords() {
        encode_slot(v, SLOT_WIDTH, &mut out);
    }
    out
}

pub fn coord_embedding(prompt: &VisualPrompt) -> Result<CoordEmbedding> {
    match prompt {
        VisualPrompt::Box(b) => {
            Ok(CoordEmbedding { values: box_values(b), kind: PromptKind::Box, pad: 0, per_scalar_dim: SLOT_WIDTH })
        }
        VisualPrompt::Mask(m) => Ok(CoordEmbedding {
            values: box_values(&mask_bbox(m)?),
            kind: PromptKind::Mask,
            pad: 0,
            per_scalar_dim: SLOT_WIDTH,
        }),
        VisualPrompt::Points(points) => {
            if 2 * points.len() > POINT_WIDTH {
                return Err(Error::Capacity(format!(
                    "{} points need {} scalars, more than the {POINT_WIDTH} available",
                    points.len(),
                    2 * points.len()
                )));
            }
            let (pad, dim) = point_pad(points.len())?;
            let mut values = Vec::with_capacity(POINT_WIDTH);
            for v in points.iter().flatten().copied().chain(std::iter::repeat(0.0).take(pad)) {
                encode_slot(v, dim, &mut values);
            }
            Ok(CoordEmbedding { values, kind: PromptKind::Point, pad, per_scalar_dim: dim })
        }
    }
}

/// The conditioning vector that stands in for the diffusion time embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct CondEmbedding {
    pub vector: Vec<f32>,
    /// Coordinate embedding width that was projected (1680 or 1280).
    pub coord_width: usize,
    pub pad: usize,
    pub opacity: OpacityLabel,
}

/// Weights of one linear map stored as `[out, in]` plus bias `[out]`.
#[derive(Clone, Copy, Debug)]
pub struct LinearRef<'a> {
    pub weight: &'a Tensor<f32>,
    pub bias: &'a Tensor<f32>,
}

impl LinearRef<'_> {
    fn apply(&self, x: &[f64], acc: &mut [f64]) -> Result<()> {
        let shape = self.weight.shape();
        if shape.len() != 2 || shape[1] != x.len() || shape[0] != acc.len() || self.bias.len() != acc.len() {
            return Err(dim_err!(
                "linear {shape:?} with bias {:?} cannot map {} to {}",
                self.bias.shape(),
                x.len(),
                acc.len()
            ));
        }
        for (o, a) in acc.iter_mut().enumerate() {
            let row = &self.weight.data()[o * x.len()..(o + 1) * x.len()];
            *a += row.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum::<f64>() + self.bias.data()[o] as f64;
        }
        Ok(())
    }
}

/// `f1(E_opacity) + f2(E_coord)`; `f2` is the head matching the coordinate width.
pub fn cond_embedding(
    opacity: OpacityLabel,
    coord: &CoordEmbedding,
    f1: LinearRef<'_>,
    f2: LinearRef<'_>,
) -> Result<CondEmbedding> {
    let d = f1.weight.shape().first().copied().unwrap_or(0);
    let mut acc = vec![0.0; d];
    f1.apply(&opacity_embedding(opacity), &mut acc)?;
    f2.apply(&coord.values, &mut acc)?;
    Ok(CondEmbedding {
        vector: acc.into_iter().map(|v| v as f32).collect(),
        coord_width: coord.values.len(),
        pad: coord.pad,
        opacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription of the frequency formula, independent of the implementation above.
    fn oracle_encode(value: f64, dim: usize) -> Vec<f64> {
        let half = dim / 2;
        let freqs: Vec<f64> = (0..half)
            .map(|i| if half == 1 { 1.0 } else { 10000f64.powf(-(i as f64) / (half as f64 - 1.0)) })
            .collect();
        freqs.iter().map(|f| (value * f).sin()).chain(freqs.iter().map(|f| (value * f).cos())).collect()
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn encode_examples() {
        assert_eq!(sinusoidal_encode(0.0, 4).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        let v = sinusoidal_encode(0.7, 2).unwrap();
        assert_eq!(v, vec![0.7f64.sin(), 0.7f64.cos()]);
        assert!((v[0] * v[0] + v[1] * v[1] - 1.0).abs() < 1e-15);
        assert!(sinusoidal_encode(1.0, 5).is_err());
        assert!(sinusoidal_encode(1.0, 0).is_err());
    }

    #[test]
    fn encode_matches_formula_oracle() {
        let ours = sinusoidal_encode(0.5 * COORD_SCALE, 320).unwrap();
        let oracle = oracle_encode(500.0, 320);
        let diff = ours.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    fn brute_pad(n: usize) -> usize {
        let mut p = 0;
        while 1680 % (2 * n + p) != 0 {
            p += 1;
        }
        p
    }

    #[test]
    fn point_pad_examples_and_exhaustive() {
        assert_eq!(point_pad(1).unwrap(), (0, 840));
        assert_eq!(point_pad(3).unwrap(), (0, 280));
        assert_eq!(point_pad(11).unwrap(), (2, 70));
        for n in 1..=64 {
            let (p, dim) = point_pad(n).unwrap();
            assert_eq!(p, brute_pad(n), "n={n}");
            assert_eq!(dim * (2 * n + p), 1680);
        }
        assert!(point_pad(0).is_err());
        assert!(point_pad(841).is_err());
    }

    #[test]
    fn box_embedding_layout() {
        let e = coord_embedding(&VisualPrompt::bbox(0.0, 0.0, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(e.values.len(), 1280);
        assert_eq!(&e.values[..320], &sinusoidal_encode(0.0, 320).unwrap()[..]);
        assert_eq!(&e.values[960..], &sinusoidal_encode(1000.0, 320).unwrap()[..]);
    }

    #[test]
    fn point_embedding_layout() {
        let two = coord_embedding(&VisualPrompt::points(vec![[0.1, 0.2], [0.3, 0.4]]).unwrap()).unwrap();
        assert_eq!((two.pad, two.per_scalar_dim, two.values.len()), (0, 420, 1680));
        assert_close(&two.values[420..840], &oracle_encode(200.0, 420));

        let pts: Vec<[f64; 2]> = (0..11).map(|i| [i as f64 / 11.0, 0.5]).collect();
        let e = coord_embedding(&VisualPrompt::points(pts).unwrap()).unwrap();
        assert_eq!((e.pad, e.per_scalar_dim, e.values.len()), (2, 70, 1680));
        // padded scalars encode zero
        assert_close(&e.values[22 * 70..23 * 70], &oracle_encode(0.0, 70));

        let many: Vec<[f64; 2]> = vec![[0.5, 0.5]; 841];
        assert!(matches!(coord_embedding(&VisualPrompt::Points(many)), Err(Error::Capacity(_))));
    }

    #[test]
    fn odd_slot_width_drops_last_cosine() {
        // 8 points: 16 scalars, 105 dims each
        let e = coord_embedding(&VisualPrompt::points(vec![[0.25, 0.75]; 8]).unwrap()).unwrap();
        assert_eq!((e.pad, e.per_scalar_dim, e.values.len()), (0, 105, 1680));
        assert_close(&e.values[..105], &oracle_encode(250.0, 106)[..105]);
    }

    #[test]
    fn mask_bbox_examples() {
        let full = BinaryMask::from_fn(7, 5, |_, _| true);
        assert_eq!(mask_bbox(&full).unwrap().coords(), [0.0, 0.0, 1.0, 1.0]);
        let single = BinaryMask::from_fn(11, 11, |x, y| x == 5 && y == 5);
        let b = mask_bbox(&single).unwrap();
        assert!(((b.x1 + b.x2) / 2.0 - 0.5).abs() < 1e-12 && ((b.y1 + b.y2) / 2.0 - 0.5).abs() < 1e-12);
        assert!((b.x2 - b.x1 - 1.0 / 11.0).abs() < 1e-12);
        assert!(mask_bbox(&BinaryMask::from_fn(3, 3, |_, _| false)).is_err());
    }

    #[test]
    fn mask_bbox_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
            let cells: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.05)).collect();
            let mask = BinaryMask::new(w, h, cells).unwrap();
            if mask.count() == 0 {
                continue;
            }
            let (mut xs, mut ys) = (vec![], vec![]);
            for y in 0..h {
                for x in 0..w {
                    if mask.get(x, y) {
                        xs.push(x);
                        ys.push(y);
                    }
                }
            }
            let expect = [
                *xs.iter().min().unwrap() as f64 / w as f64,
                *ys.iter().min().unwrap() as f64 / h as f64,
                (*xs.iter().max().unwrap() + 1) as f64 / w as f64,
                (*ys.iter().max().unwrap() + 1) as f64 / h as f64,
            ];
            assert_eq!(mask_bbox(&mask).unwrap().coords(), expect);
        }
    }

    #[test]
    fn opacity_examples() {
        let zero = opacity_embedding(OpacityLabel::Transparent);
        assert!(zero[..160].iter().all(|&v| v == 0.0) && zero[160..].iter().all(|&v| v == 1.0));
        let one = opacity_embedding(OpacityLabel::Opaque);
        let differ = one.iter().zip(&zero).filter(|(a, b)| a != b).count();
        assert!(differ as f64 > 0.9 * 320.0, "{differ}");
        assert_eq!(one, opacity_embedding(OpacityLabel::Opaque));
    }

    fn random_linear(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> (Tensor<f32>, Tensor<f32>) {
        (
            Tensor::from_fn([out, inp], |_| rng.random_range(-0.05..0.05)),
            Tensor::from_fn([out], |_| rng.random_range(-0.5..0.5)),
        )
    }

    #[test]
    fn cond_embedding_examples() {
        let coord = coord_embedding(&VisualPrompt::bbox(0.1, 0.2, 0.6, 0.9).unwrap()).unwrap();
        let (w1, b1) = (Tensor::zeros([8, 320]), Tensor::zeros([8]));
        let (w2, b2) = (Tensor::zeros([8, 1280]), Tensor::zeros([8]));
        let z = cond_embedding(
            OpacityLabel::Opaque,
            &coord,
            LinearRef { weight: &w1, bias: &b1 },
            LinearRef { weight: &w2, bias: &b2 },
        )
        .unwrap();
        assert!(z.vector.iter().all(|&v| v == 0.0));

        // f2 selects the first 8 coordinates
        let w2 = Tensor::from_fn([8, 1280], |k| if k / 1280 == k % 1280 { 1.0 } else { 0.0 });
        let e = cond_embedding(
            OpacityLabel::Opaque,
            &coord,
            LinearRef { weight: &w1, bias: &b1 },
            LinearRef { weight: &w2, bias: &b2 },
        )
        .unwrap();
        for i in 0..8 {
            assert!((e.vector[i] as f64 - coord.values[i]).abs() < 1e-6);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let point = coord_embedding(&VisualPrompt::points(vec![[0.3, 0.7]]).unwrap()).unwrap();
        let (w1, b1) = random_linear(&mut rng, 16, 320);
        let (w2, b2) = random_linear(&mut rng, 16, 1680);
        let e = cond_embedding(
            OpacityLabel::Transparent,
            &point,
            LinearRef { weight: &w1, bias: &b1 },
            LinearRef { weight: &w2, bias: &b2 },
        )
        .unwrap();
        let op = opacity_embedding(OpacityLabel::Transparent);
        for o in 0..16 {
            let mut expect = b1.data()[o] as f64 + b2.data()[o] as f64;
            for i in 0..320 {
                expect += w1.data()[o * 320 + i] as f64 * op[i];
            }
            for i in 0..1680 {
                expect += w2.data()[o * 1680 + i] as f64 * point.values[i];
            }
            assert!((e.vector[o] as f64 - expect).abs() < 1e-6);
        }
        assert_eq!((e.coord_width, e.pad), (1680, 0));

        // box embedding through the point head
        let wrong = cond_embedding(
            OpacityLabel::Opaque,
            &coord,
            LinearRef { weight: &w1, bias: &b1 },
            LinearRef { weight: &w2, bias: &b2 },
        );
        assert!(matches!(wrong, Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn coord_width_is_fixed(n in 1usize..200, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
            prop_assert_eq!(coord_embedding(&VisualPrompt::points(pts).unwrap()).unwrap().values.len(), 1680);
            let b = VisualPrompt::bbox(rng.random_range(0.0..0.5), rng.random_range(0.0..0.5), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)).unwrap();
            prop_assert_eq!(coord_embedding(&b).unwrap().values.len(), 1280);
        }
    }
}
