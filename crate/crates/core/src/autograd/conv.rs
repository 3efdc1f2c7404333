//! im2col convolution kernels.

use crate::error::{dim_err, Result};
use crate::tensor::{gemm, Element, MatRef};

pub(super) struct Geometry {
    pub n: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(dim_err!("conv2d expects [N,C,H,W] input and [O,C,k,k] weight, got {x:?} and {w:?}"));
        }
        if w[1] != x[1] || w[2] != w[3] {
            return Err(dim_err!("conv2d weight {w:?} incompatible with input {x:?}"));
        }
        let k = w[2];
        if x[2] + 2 * pad < k || x[3] + 2 * pad < k {
            return Err(dim_err!("conv2d kernel {k} larger than padded input {x:?}"));
        }
        Ok(Geometry {
            n: x[0],
            in_c: x[1],
            h: x[2],
            w: x[3],
            out_c: w[0],
            k,
            stride,
            pad,
            out_h: (x[2] + 2 * pad - k) / stride + 1,
            out_w: (x[3] + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output columns `[lo, hi)` whose input index `o * stride + kj - pad` lies inside `0..len`.
fn valid_range(geo: &Geometry, kj: usize, len: usize, out: usize) -> (usize, usize) {
    let (s, pad) = (geo.stride, geo.pad);
    let lo = if kj >= pad { 0 } else { (pad - kj).div_ceil(s) };
    // largest o with o * s + kj - pad <= len - 1
    let hi = if len + pad < kj + 1 { 0 } else { ((len + pad - kj - 1) / s + 1).min(out) };
    (lo.min(hi), hi)
}

fn im2col<T: Element>(geo: &Geometry, x: &[T], col: &mut [T]) {
    let (k, ohw) = (geo.k, geo.out_hw());
    for ci in 0..geo.in_c {
        let plane = &x[ci * geo.h * geo.w..(ci + 1) * geo.h * geo.w];
        for ki in 0..k {
            let (ilo, ihi) = valid_range(geo, ki, geo.h, geo.out_h);
            for kj in 0..k {
                let (jlo, jhi) = valid_range(geo, kj, geo.w, geo.out_w);
                let row = (ci * k + ki) * k + kj;
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                for oi in 0..geo.out_h {
                    let line = &mut dst[oi * geo.out_w..(oi + 1) * geo.out_w];
                    if oi < ilo || oi >= ihi {
                        line.fill(T::zero());
                        continue;
                    }
                    let ii = oi * geo.stride + ki - geo.pad;
                    let src = &plane[ii * geo.w..(ii + 1) * geo.w];
                    line[..jlo].fill(T::zero());
                    line[jhi..].fill(T::zero());
                    let start = jlo * geo.stride + kj - geo.pad;
                    if geo.stride == 1 {
                        line[jlo..jhi].copy_from_slice(&src[start..start + jhi - jlo]);
                    } else {
                        for (d, &v) in line[jlo..jhi].iter_mut().zip(src[start..].iter().step_by(geo.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(geo: &Geometry, col: &[T], gx: &mut [T]) {
    let (k, ohw) = (geo.k, geo.out_hw());
    for ci in 0..geo.in_c {
        let plane = &mut gx[ci * geo.h * geo.w..(ci + 1) * geo.h * geo.w];
        for ki in 0..k {
            let (ilo, ihi) = valid_range(geo, ki, geo.h, geo.out_h);
            for kj in 0..k {
                let (jlo, jhi) = valid_range(geo, kj, geo.w, geo.out_w);
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * ohw..(row + 1) * ohw];
                for oi in ilo..ihi {
                    let ii = oi * geo.stride + ki - geo.pad;
                    let dst = &mut plane[ii * geo.w..(ii + 1) * geo.w];
                    let line = &src[oi * geo.out_w + jlo..oi * geo.out_w + jhi];
                    let start = jlo * geo.stride + kj - geo.pad;
                    for (d, &v) in dst[start..].iter_mut().step_by(geo.stride).zip(line) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Lowers every sample into one `[rows, N * ohw]` matrix.
fn im2col_batch<T: Element>(geo: &Geometry, x: &[T]) -> Vec<T> {
    let (rows, ohw) = (geo.col_rows(), geo.out_hw());
    let in_len = geo.in_c * geo.h * geo.w;
    let cols = geo.n * ohw;
    let mut out = vec![T::zero(); rows * cols];
    let mut col = vec![T::zero(); if geo.is_pointwise() { 0 } else { rows * ohw }];
    for s in 0..geo.n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let src: &[T] = if geo.is_pointwise() {
            xs
        } else {
            im2col(geo, xs, &mut col);
            &col
        };
        for r in 0..rows {
            out[r * cols + s * ohw..r * cols + (s + 1) * ohw].copy_from_slice(&src[r * ohw..(r + 1) * ohw]);
        }
    }
    out
}

/// `[N, C, P]` to `[C, N * P]`.
fn channels_first<T: Element>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            out[ch * n * p + s * p..ch * n * p + (s + 1) * p].copy_from_slice(&x[(s * c + ch) * p..(s * c + ch + 1) * p]);
        }
    }
    out
}

pub(super) fn forward<T: Element>(geo: &Geometry, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let (rows, ohw) = (geo.col_rows(), geo.out_hw());
    let out_len = geo.out_c * ohw;
    let mut out = vec![T::zero(); geo.n * out_len];
    if geo.n == 1 {
        let col;
        let cols: &[T] = if geo.is_pointwise() {
            x
        } else {
            let mut buf = vec![T::zero(); rows * ohw];
            im2col(geo, x, &mut buf);
            col = buf;
            &col
        };
        gemm(MatRef::row_major(w, geo.out_c, rows), MatRef::row_major(cols, rows, ohw), &mut out, T::zero());
    } else {
        let cols = im2col_batch(geo, x);
        let wide = geo.n * ohw;
        let mut tmp = vec![T::zero(); geo.out_c * wide];
        gemm(MatRef::row_major(w, geo.out_c, rows), MatRef::row_major(&cols, rows, wide), &mut tmp, T::zero());
        for o in 0..geo.out_c {
            for s in 0..geo.n {
                out[s * out_len + o * ohw..s * out_len + (o + 1) * ohw]
                    .copy_from_slice(&tmp[o * wide + s * ohw..o * wide + (s + 1) * ohw]);
            }
        }
    }
    if let Some(b) = b {
        for (i, chunk) in out.chunks_exact_mut(ohw).enumerate() {
            let bias = b[i % geo.out_c];
            chunk.iter_mut().for_each(|v| *v = *v + bias);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Element>(
    geo: &Geometry,
    x: &[T],
    w: &[T],
    g: &[T],
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let (rows, ohw) = (geo.col_rows(), geo.out_hw());
    let in_len = geo.in_c * geo.h * geo.w;
    let wide = geo.n * ohw;
    if let Some(gb) = gb {
        for (i, chunk) in g.chunks_exact(ohw).enumerate() {
            let o = i % geo.out_c;
            gb[o] = chunk.iter().fold(gb[o], |a, &v| a + v);
        }
    }
    let owned_g;
    let gmat: &[T] = if geo.n == 1 {
        g
    } else {
        owned_g = channels_first(g, geo.n, geo.out_c, ohw);
        &owned_g
    };
    if let Some(gw) = gw {
        let owned_cols;
        let cols: &[T] = if geo.n == 1 && geo.is_pointwise() {
            x
        } else {
            owned_cols = im2col_batch(geo, x);
            &owned_cols
        };
        gemm(MatRef::row_major(gmat, geo.out_c, wide), MatRef::row_major(cols, rows, wide).t(), gw, T::one());
    }
    if let Some(gx) = gx {
        let mut gcol = vec![T::zero(); rows * wide];
        gemm(MatRef::row_major(w, geo.out_c, rows).t(), MatRef::row_major(gmat, geo.out_c, wide), &mut gcol, T::zero());
        let mut sample = vec![T::zero(); rows * ohw];
        for s in 0..geo.n {
            for r in 0..rows {
                sample[r * ohw..(r + 1) * ohw].copy_from_slice(&gcol[r * wide + s * ohw..r * wide + (s + 1) * ohw]);
            }
            let gxs = &mut gx[s * in_len..(s + 1) * in_len];
            if geo.is_pointwise() {
                gxs.iter_mut().zip(&sample).for_each(|(d, &v)| *d = *d + v);
            } else {
                col2im(geo, &sample, gxs);
            }
        }
    }
}
