//! Connectivity error over thresholded joint regions.

use super::{check_pair, MetricConfig, SUM_SCALE};
use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// Differences below this do not count against connectedness.
const MIN_DROP: f64 = 0.15;

/// Number of threshold intervals for a spacing; `1 / step` must be a whole number of at least 2.
pub fn connectivity_levels(step: f64) -> Result<usize> {
    let n = (1.0 / step).round();
    if !(step > 0.0) || !n.is_finite() || n < 2.0 || (n * step - 1.0).abs() > 1e-9 {
        return Err(arg_err!("connectivity step must divide 1 into at least 2 parts, got {step}"));
    }
    Ok(n as usize)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Largest 4-connected component of `mask`; ties go to the component met first in row-major order.
fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask[i] {
                continue;
            }
            for j in [(x > 0).then(|| i - 1), (y > 0).then(|| i - w)].into_iter().flatten() {
                if mask[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    // the smaller index stays root, so a root is its component's first pixel
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut size = vec![0usize; h * w];
    for i in 0..h * w {
        if mask[i] {
            let r = find(&mut parent, i);
            size[r] += 1;
        }
    }
    let best = (0..h * w).filter(|&r| size[r] > 0).fold(None, |best: Option<usize>, r| match best {
        Some(b) if size[b] >= size[r] => Some(b),
        _ => Some(r),
    });
    match best {
        Some(b) => (0..h * w).map(|i| mask[i] && find(&mut parent, i) == b).collect(),
        None => vec![false; h * w],
    }
}

pub fn conn_metric_with(pred: &Tensor<f64>, gt: &Tensor<f64>, step: f64) -> Result<f64> {
    let (h, w) = check_pair(pred, gt)?;
    let levels = connectivity_levels(step)?;
    let (p, g) = (pred.data(), gt.data());
    let mut l = vec![-1.0; h * w];
    for k in 1..levels {
        let theta = k as f64 / levels as f64;
        let joint: Vec<bool> = p.iter().zip(g).map(|(a, b)| *a >= theta && *b >= theta).collect();
        let omega = largest_component(&joint, h, w);
        let prev = (k - 1) as f64 / levels as f64;
        for (li, inside) in l.iter_mut().zip(omega) {
            if *li == -1.0 && !inside {
                *li = prev;
            }
        }
    }
    let phi = |a: f64, l: f64| {
        let d = a - l;
        if d >= MIN_DROP { 1.0 - d } else { 1.0 }
    };
    let mut sum = 0.0;
    for i in 0..h * w {
        let li = if l[i] == -1.0 { 1.0 } else { l[i] };
        sum += (phi(p[i], li) - phi(g[i], li)).abs();
    }
    Ok(sum / SUM_SCALE)
}

pub fn conn_metric(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    conn_metric_with(pred, gt, MetricConfig::default().conn_step)
}
