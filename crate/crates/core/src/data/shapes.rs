//! Parametric foregrounds with analytic, anti-aliased alpha.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::prompt::OpacityLabel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Blob,
    Ring,
    Glass,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Disk, ShapeKind::Blob, ShapeKind::Ring, ShapeKind::Glass];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Blob => "blob",
            ShapeKind::Ring => "ring",
            ShapeKind::Glass => "glass",
        }
    }

    pub fn opacity(self) -> OpacityLabel {
        match self {
            ShapeKind::Glass => OpacityLabel::Transparent,
            _ => OpacityLabel::Opaque,
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| crate::error::arg_err!("unknown shape kind {s:?}"))
    }
}

/// Radius range as a fraction of the shorter image side.
pub const RADIUS_RANGE: (f64, f64) = (0.11, 0.17);
pub const EDGE_RANGE: (f64, f64) = (1.0, 3.0);
pub const GLASS_PEAK_RANGE: (f64, f64) = (0.2, 0.6);
const BLOB_HARMONICS: usize = 3;
const BLOB_AMPLITUDE: f64 = 0.08;

/// Everything needed to redraw a foreground at any position.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Outer radius in pixels.
    pub radius: f64,
    /// Inner radius of rings in pixels, zero otherwise.
    pub inner: f64,
    /// Boundary perturbation `(amplitude, phase)` for harmonics 2, 3, ...
    pub harmonics: Vec<(f64, f64)>,
    /// Width of the alpha ramp in pixels.
    pub edge: f64,
    /// Interior alpha.
    pub peak: f64,
    pub color: [f64; 3],
}

/// A color plane `[3, H, W]` with its alpha `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub rgb: Tensor<f64>,
    pub alpha: Tensor<f64>,
}

/// One rendered foreground.
#[derive(Clone, Debug)]
pub struct Foreground {
    pub spec: ShapeSpec,
    pub center: (f64, f64),
    pub layer: Layer,
}

impl Foreground {
    pub fn opacity(&self) -> OpacityLabel {
        self.spec.kind.opacity()
    }
}

fn ramp(inside: f64, edge: f64) -> f64 {
    (inside / edge + 0.5).clamp(0.0, 1.0)
}

impl ShapeSpec {
    pub fn random<R: Rng + ?Sized>(kind: ShapeKind, height: usize, width: usize, rng: &mut R) -> Self {
        let side = height.min(width) as f64;
        let radius = rng.random_range(RADIUS_RANGE.0..RADIUS_RANGE.1) * side;
        let mut edge = rng.random_range(EDGE_RANGE.0..=EDGE_RANGE.1);
        let outline = match kind {
            ShapeKind::Disk | ShapeKind::Ring => false,
            ShapeKind::Blob => true,
            ShapeKind::Glass => rng.random_bool(0.5),
        };
        let harmonics = if outline {
            (0..BLOB_HARMONICS)
                .map(|_| (rng.random_range(0.0..BLOB_AMPLITUDE), rng.random_range(0.0..std::f64::consts::TAU)))
                .collect()
        } else {
            Vec::new()
        };
        let inner = if kind == ShapeKind::Ring {
            let inner = radius * rng.random_range(0.4..0.6);
            // keep a fully opaque core inside the band
            edge = edge.min((radius - inner) / 2.0);
            inner
        } else {
            0.0
        };
        let (peak, color) = if kind == ShapeKind::Glass {
            let peak = rng.random_range(GLASS_PEAK_RANGE.0..=GLASS_PEAK_RANGE.1);
            (peak, [(); 3].map(|_| rng.random_range(0.6..1.0)))
        } else {
            (1.0, [(); 3].map(|_| rng.random_range(0.0..1.0)))
        };
        ShapeSpec { kind, radius, inner, harmonics, edge, peak, color }
    }

    /// Distance from the center beyond which alpha is zero.
    pub fn extent(&self) -> f64 {
        let wobble: f64 = self.harmonics.iter().map(|h| h.0).sum();
        self.radius * (1.0 + wobble) + self.edge / 2.0
    }

    fn boundary(&self, theta: f64) -> f64 {
        let wobble: f64 = self.harmonics.iter().enumerate().map(|(i, &(a, phi))| a * ((i + 2) as f64 * theta + phi).cos()).sum();
        self.radius * (1.0 + wobble)
    }

    /// Alpha at a point given its offset from the shape center.
    pub fn alpha_at(&self, dx: f64, dy: f64) -> f64 {
        let d = (dx * dx + dy * dy).sqrt();
        let outer = if self.harmonics.is_empty() { self.radius } else { self.boundary(dy.atan2(dx)) };
        let mut a = ramp(outer - d, self.edge);
        if self.inner > 0.0 {
            a = a.min(ramp(d - self.inner, self.edge));
        }
        a * self.peak
    }

    /// Rasterizes at `center` (pixel units), sampling pixel centers.
    pub fn render(&self, center: (f64, f64), height: usize, width: usize) -> Layer {
        let mut alpha = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                alpha.push(self.alpha_at(x as f64 + 0.5 - center.0, y as f64 + 0.5 - center.1));
            }
        }
        let rgb = Tensor::from_fn([3, height, width], |i| self.color[i / (height * width)]);
        Layer { rgb, alpha: Tensor::new([height, width], alpha).expect("extent matches") }
    }
}

/// A random shape of `kind` at a random position that keeps it on the canvas where possible.
pub fn gen_foreground<R: Rng + ?Sized>(kind: ShapeKind, height: usize, width: usize, rng: &mut R) -> Foreground {
    let spec = ShapeSpec::random(kind, height, width, rng);
    let center = random_center(spec.extent(), height, width, rng);
    let layer = spec.render(center, height, width);
    Foreground { spec, center, layer }
}

fn axis<R: Rng + ?Sized>(extent: f64, len: usize, rng: &mut R) -> f64 {
    let len = len as f64;
    if 2.0 * extent >= len {
        len / 2.0
    } else {
        rng.random_range(extent..=len - extent)
    }
}

pub(crate) fn random_center<R: Rng + ?Sized>(extent: f64, height: usize, width: usize, rng: &mut R) -> (f64, f64) {
    let x = axis(extent, width, rng);
    let y = axis(extent, height, rng);
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disk_mass_tracks_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let f = gen_foreground(ShapeKind::Disk, 64, 64, &mut rng);
            let mass: f64 = f.layer.alpha.data().iter().sum();
            let area = std::f64::consts::PI * f.spec.radius * f.spec.radius;
            assert!((mass / area - 1.0).abs() < 0.1, "mass {mass} area {area}");
        }
    }

    #[test]
    fn opaque_edges_are_soft_and_interiors_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [ShapeKind::Disk, ShapeKind::Blob, ShapeKind::Ring] {
            for _ in 0..20 {
                let f = gen_foreground(kind, 64, 64, &mut rng);
                let a = f.layer.alpha.data();
                assert!((1.0..=3.0).contains(&f.spec.edge) || kind == ShapeKind::Ring);
                assert!(a.iter().any(|&v| v == 1.0));
                assert!(a.iter().any(|&v| v > 0.0 && v < 1.0));
                assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
                assert_eq!(f.opacity(), OpacityLabel::Opaque);
            }
        }
    }

    #[test]
    fn glass_is_translucent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let f = gen_foreground(ShapeKind::Glass, 64, 64, &mut rng);
            let max = f.layer.alpha.data().iter().copied().fold(0.0, f64::max);
            assert!((0.2..=0.6).contains(&max), "peak {max}");
            assert_eq!(f.opacity(), OpacityLabel::Transparent);
        }
    }

    #[test]
    fn ring_has_a_hole() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = gen_foreground(ShapeKind::Ring, 64, 64, &mut rng);
        assert_eq!(f.spec.alpha_at(0.0, 0.0), 0.0);
        let mid = (f.spec.radius + f.spec.inner) / 2.0;
        assert_eq!(f.spec.alpha_at(mid, 0.0), 1.0);
    }

    #[test]
    fn support_stays_within_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in ShapeKind::ALL {
            let f = gen_foreground(kind, 64, 64, &mut rng);
            let e = f.spec.extent();
            for y in 0..64 {
                for x in 0..64 {
                    let (dx, dy) = (x as f64 + 0.5 - f.center.0, y as f64 + 0.5 - f.center.1);
                    if (dx * dx + dy * dy).sqrt() > e {
                        assert_eq!(f.layer.alpha.data()[y * 64 + x], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_foreground() {
        for kind in ShapeKind::ALL {
            let a = gen_foreground(kind, 32, 48, &mut ChaCha8Rng::seed_from_u64(9));
            let b = gen_foreground(kind, 32, 48, &mut ChaCha8Rng::seed_from_u64(9));
            assert_eq!(a.layer, b.layer);
            assert_eq!(a.spec, b.spec);
        }
        assert_eq!("ring".parse::<ShapeKind>().unwrap(), ShapeKind::Ring);
        assert!("cube".parse::<ShapeKind>().is_err());
    }
}
