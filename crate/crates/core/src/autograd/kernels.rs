use super::NORM_EPS;
use crate::tensor::{Element, MatRef};

pub(super) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `dst += alpha * src`
pub(super) fn axpy<T: Element>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * s;
    }
}

pub(super) fn view<T: Element>(data: &[T], rows: usize, cols: usize, transposed: bool) -> MatRef<'_, T> {
    let m = MatRef::row_major(data, rows, cols);
    if transposed {
        m.t()
    } else {
        m
    }
}

pub(super) fn permute<T: Element>(src: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    if rank == 0 {
        out.extend_from_slice(src);
        return (out, out_shape);
    }
    let last = rank - 1;
    let (inner_n, inner_stride) = (out_shape[last], strides[last]);
    let mut idx = vec![0usize; rank];
    let outer: usize = out_shape[..last].iter().product();
    for _ in 0..outer {
        let base: usize = idx[..last].iter().zip(&strides[..last]).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner_n]);
        } else {
            out.extend((0..inner_n).map(|j| src[base + j * inner_stride]));
        }
        for ax in (0..last).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

pub(super) fn avg_pool<T: Element>(src: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h / f, w / f);
    let inv = T::one() / T::of((f * f) as f64);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        for i in 0..h {
            for j in 0..w {
                let d = &mut out[p * oh * ow + (i / f) * ow + j / f];
                *d = *d + src[p * h * w + i * w + j];
            }
        }
    }
    out.iter_mut().for_each(|v| *v = *v * inv);
    out
}

fn group_layout(shape: &[usize], groups: usize) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let spatial: usize = shape[2..].iter().product();
    (n, c / groups, spatial)
}

pub(super) fn group_norm_forward<T: Element>(
    x: &[T],
    shape: &[usize],
    groups: usize,
    scale: &[T],
    shift: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, cpg, spatial) = group_layout(shape, groups);
    let block = cpg * spatial;
    let mut out = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(n * groups);
    let mut rstds = Vec::with_capacity(n * groups);
    for b in 0..n * groups {
        let xs = &x[b * block..(b + 1) * block];
        let mean = xs.iter().map(|v| v.f64()).sum::<f64>() / block as f64;
        let var = xs.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / block as f64;
        let rstd = 1.0 / (var + NORM_EPS).sqrt();
        let g = b % groups;
        for (ci, chunk) in xs.chunks_exact(spatial).enumerate() {
            let c = g * cpg + ci;
            let dst = &mut out[b * block + ci * spatial..b * block + (ci + 1) * spatial];
            let (mu, rs) = (T::of(mean), T::of(rstd));
            for (d, &v) in dst.iter_mut().zip(chunk) {
                *d = (v - mu) * rs * scale[c] + shift[c];
            }
        }
        means.push(T::of(mean));
        rstds.push(T::of(rstd));
    }
    (out, means, rstds)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn group_norm_backward<T: Element>(
    x: &[T],
    shape: &[usize],
    groups: usize,
    scale: &[T],
    means: &[T],
    rstds: &[T],
    g: &[T],
    mut gx: Option<&mut [T]>,
    mut gscale: Option<&mut [T]>,
    mut gshift: Option<&mut [T]>,
) {
    let (n, cpg, spatial) = group_layout(shape, groups);
    let block = cpg * spatial;
    let count = T::of(block as f64);
    for b in 0..n * groups {
        let grp = b % groups;
        let (mu, rs) = (means[b], rstds[b]);
        let mut sum_gxhat = T::zero();
        let mut sum_gxhat_xhat = T::zero();
        for ci in 0..cpg {
            let c = grp * cpg + ci;
            let off = b * block + ci * spatial;
            let mut sg = T::zero();
            let mut sgx = T::zero();
            for k in 0..spatial {
                let xhat = (x[off + k] - mu) * rs;
                sg = sg + g[off + k];
                sgx = sgx + g[off + k] * xhat;
            }
            if let Some(gs) = gscale.as_deref_mut() {
                gs[c] = gs[c] + sgx;
            }
            if let Some(gt) = gshift.as_deref_mut() {
                gt[c] = gt[c] + sg;
            }
            sum_gxhat = sum_gxhat + sg * scale[c];
            sum_gxhat_xhat = sum_gxhat_xhat + sgx * scale[c];
        }
        if let Some(gx) = gx.as_deref_mut() {
            for ci in 0..cpg {
                let c = grp * cpg + ci;
                let off = b * block + ci * spatial;
                for k in 0..spatial {
                    let xhat = (x[off + k] - mu) * rs;
                    let gxhat = g[off + k] * scale[c];
                    gx[off + k] = gx[off + k]
                        + rs / count * (count * gxhat - sum_gxhat - xhat * sum_gxhat_xhat);
                }
            }
        }
    }
}
