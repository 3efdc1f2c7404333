//! Gradient error: difference of derivative-of-Gaussian gradient magnitudes.

use super::{check_pair, MetricConfig, SUM_SCALE};
use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// Separable factors of the x-derivative filter `hx(i, j) = smooth[i] * deriv[j]`; `hy` is its transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct GradKernel {
    pub half: usize,
    pub smooth: Vec<f64>,
    pub deriv: Vec<f64>,
}

impl GradKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(arg_err!("grad sigma must be positive, got {sigma}"));
        }
        let half = (3.0 * sigma).floor() as usize;
        let gauss = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let xs: Vec<f64> = (0..=2 * half).map(|i| i as f64 - half as f64).collect();
        let smooth: Vec<f64> = xs.iter().map(|&x| gauss(x)).collect();
        let mut deriv: Vec<f64> = xs.iter().map(|&x| -x * gauss(x) / (sigma * sigma)).collect();
        // the outer product has unit Frobenius norm
        let norm = smooth.iter().map(|s| s * s).sum::<f64>().sqrt() * deriv.iter().map(|d| d * d).sum::<f64>().sqrt();
        deriv.iter_mut().for_each(|d| *d /= norm);
        Ok(GradKernel { half, smooth, deriv })
    }

    /// Dense `hx` as a `(2 half + 1)^2` row-major array.
    pub fn hx(&self) -> Vec<f64> {
        self.smooth.iter().flat_map(|s| self.deriv.iter().map(move |d| s * d)).collect()
    }
}

// 1-D correlation along rows (`horizontal`) or columns with replicated borders.
fn filter(src: &[f64], h: usize, w: usize, taps: &[f64], half: usize, horizontal: bool) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let off = k as isize - half as isize;
                let (sy, sx) = if horizontal {
                    (y, (x as isize + off).clamp(0, w as isize - 1) as usize)
                } else {
                    ((y as isize + off).clamp(0, h as isize - 1) as usize, x)
                };
                acc += t * src[sy * w + sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gradient magnitude `sqrt(gx^2 + gy^2)` of an `[H, W]` matte.
pub fn gaussian_gradient(alpha: &Tensor<f64>, kernel: &GradKernel) -> Vec<f64> {
    let (h, w) = (alpha.shape()[0], alpha.shape()[1]);
    let (k, half) = (kernel, kernel.half);
    let gx = filter(&filter(alpha.data(), h, w, &k.smooth, half, false), h, w, &k.deriv, half, true);
    let gy = filter(&filter(alpha.data(), h, w, &k.deriv, half, false), h, w, &k.smooth, half, true);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

pub fn grad_metric_with(pred: &Tensor<f64>, gt: &Tensor<f64>, sigma: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let kernel = GradKernel::new(sigma)?;
    let (p, g) = (gaussian_gradient(pred, &kernel), gaussian_gradient(gt, &kernel));
    Ok(p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / SUM_SCALE)
}

pub fn grad_metric(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    grad_metric_with(pred, gt, MetricConfig::default().grad_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Full 2-D correlation with clamped indices.
    fn direct(alpha: &Tensor<f64>, kern: &[f64], half: usize, transpose: bool) -> Vec<f64> {
        let (h, w) = (alpha.shape()[0] as isize, alpha.shape()[1] as isize);
        let size = 2 * half + 1;
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for i in 0..size {
                    for j in 0..size {
                        let k = if transpose { kern[j * size + i] } else { kern[i * size + j] };
                        let sy = (y + i as isize - half as isize).clamp(0, h - 1);
                        let sx = (x + j as isize - half as isize).clamp(0, w - 1);
                        acc += k * alpha.data()[(sy * w + sx) as usize];
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    fn oracle(pred: &Tensor<f64>, gt: &Tensor<f64>, sigma: f64) -> f64 {
        let half = (3.0 * sigma).floor() as usize;
        let g = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp();
        let mut hx = Vec::new();
        for i in 0..=2 * half {
            for j in 0..=2 * half {
                let (yi, xj) = (i as f64 - half as f64, j as f64 - half as f64);
                hx.push(g(yi) * -xj * g(xj));
            }
        }
        let norm = hx.iter().map(|v| v * v).sum::<f64>().sqrt();
        hx.iter_mut().for_each(|v| *v /= norm);
        let amp = |a: &Tensor<f64>| {
            let (gx, gy) = (direct(a, &hx, half, false), direct(a, &hx, half, true));
            gx.iter().zip(&gy).map(|(x, y)| (x * x + y * y).sqrt()).collect::<Vec<_>>()
        };
        amp(pred).iter().zip(amp(gt)).map(|(a, b)| (a - b).abs()).sum::<f64>() / 1000.0
    }

    #[test]
    fn kernel_shape_and_norm() {
        let k = GradKernel::new(1.4).unwrap();
        assert_eq!(k.half, 4);
        assert_eq!(k.smooth.len(), 9);
        let norm: f64 = k.hx().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(k.deriv[4], 0.0);
        assert!((k.deriv[0] + k.deriv[8]).abs() < 1e-15 && k.deriv[0] > 0.0);
        assert!(GradKernel::new(0.0).is_err());
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w, sigma) in [(16, 16, 1.4), (7, 12, 1.4), (20, 9, 0.8), (3, 3, 1.4)] {
            let p = Tensor::from_fn([h, w], |_| rng.random::<f64>());
            let g = Tensor::from_fn([h, w], |_| rng.random::<f64>());
            let got = grad_metric_with(&p, &g, sigma).unwrap();
            let want = oracle(&p, &g, sigma);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn flat_mattes_have_no_gradient() {
        let k = GradKernel::new(1.4).unwrap();
        assert!(gaussian_gradient(&Tensor::full([10, 10], 0.7), &k).iter().all(|v| v.abs() < 1e-15));
        let a = Tensor::full([10, 10], 0.2);
        assert!(grad_metric(&a, &Tensor::full([10, 10], 0.9)).unwrap() < 1e-12);
    }

    #[test]
    fn vertical_step_responds_in_x_only() {
        let step = Tensor::from_fn([12, 12], |i| if i % 12 >= 6 { 1.0 } else { 0.0 });
        let k = GradKernel::new(1.4).unwrap();
        let amp = gaussian_gradient(&step, &k);
        // the edge column dominates, rows are identical
        assert!(amp[5] > amp[2] && amp[6] > amp[9]);
        for y in 1..12 {
            assert_eq!(amp[y * 12..y * 12 + 12], amp[..12]);
        }
        assert!(grad_metric(&step, &Tensor::zeros([12, 12])).unwrap() > 0.0);
    }
}
