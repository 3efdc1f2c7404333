//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! already a topological order and the backward pass is a single reverse
//! sweep. Values are immutable once recorded; gradients are accumulated in a
//! side table populated by [`Graph::backward`].

mod conv;
pub mod gradcheck;
mod kernels;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::tensor::{gemm, Element, MatRef, Tensor};

pub use gradcheck::{check_gradient, GradCheck, GradCheckReport};

/// Variance floor used by group normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    Sigmoid(Var),
    Silu(Var),
    LnEps(Var, T),
    Map { input: Var, derivative: Vec<T> },
    Sum(Var),
    Mean(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize },
    GroupNorm { x: Var, scale: Var, shift: Var, groups: usize, mean: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    Bmm { a: Var, b: Var, trans_a: bool, trans_b: bool },
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    UpsampleNearest { x: Var, factor: usize },
    AvgPool { x: Var, factor: usize },
    AddChannel { x: Var, v: Var },
    AddKeyBias { scores: Var, bias: Var, group: usize },
    Crop { x: Var, top: usize, left: usize },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Abs(a) | Sigmoid(a) | Silu(a) | LnEps(a, _) | Sum(a)
            | Mean(a) | Softmax(a) | Reshape(a) => vec![*a],
            Map { input, .. } => vec![*input],
            Linear { x, w, b } | Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            GroupNorm { x, scale, shift, .. } => vec![*x, *scale, *shift],
            Bmm { a, b, .. } => vec![*a, *b],
            Permute { x, .. } | UpsampleNearest { x, .. } | AvgPool { x, .. } | Crop { x, .. } => {
                vec![*x]
            }
            Concat { inputs, .. } => inputs.clone(),
            AddChannel { x, v } => vec![*x, *v],
            AddKeyBias { scores, bias, .. } => vec![*scores, *bias],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-owner computation record. Build a fresh graph per forward pass.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `v`, if it was tracked.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, name: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, op, name)
    }

    fn unary(&mut self, x: Var, op: Op<T>, name: &str, f: impl Fn(T) -> T) -> Result<Var> {
        let out = self.value(x).map(f);
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, Op::Scale(x, c), "scale", |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), "add_scalar", |v| v + c)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), "abs", |v| v.abs())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), "sigmoid", kernels::sigmoid)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Silu(x), "silu", |v| v * kernels::sigmoid(v))
    }

    /// `ln(x + eps)`; the mask-bias path of masked attention.
    pub fn ln_eps(&mut self, x: Var, eps: T) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v + eps <= T::zero()) {
            return Err(arg_err!("ln_eps needs x + eps > 0"));
        }
        self.unary(x, Op::LnEps(x, eps), "ln_eps", |v| (v + eps).ln())
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map(&mut self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> Result<Var> {
        let derivative = self.value(x).data().iter().map(|&v| df(v)).collect();
        let out = self.value(x).map(f);
        self.push(out, Op::Map { input: x, derivative }, "map")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().fold(T::zero(), |a, &b| a + b) / T::of(v.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Affine map over the last axis: `x · wᵀ + b` with `w` of shape `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[1] {
            return Err(dim_err!("linear: input {xs:?} against weight {ws:?}"));
        }
        let (d_out, d_in) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(dim_err!("linear bias {:?}, expected [{d_out}]", self.shape(b)));
            }
        }
        let rows = self.value(x).len() / d_in;
        let mut out = vec![T::zero(); rows * d_out];
        gemm(
            MatRef::row_major(self.value(x).data(), rows, d_in),
            MatRef::row_major(self.value(w).data(), d_out, d_in).t(),
            &mut out,
            T::zero(),
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(d_out) {
                for (o, &bb) in row.iter_mut().zip(bias) {
                    *o = *o + bb;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, "linear")
    }

    /// 2-D cross-correlation, `x: [N, C, H, W]`, `w: [O, C, k, k]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        if stride == 0 {
            return Err(arg_err!("conv2d stride must be positive"));
        }
        let geo = conv::Geometry::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geo.out_c] {
                return Err(dim_err!("conv2d bias {:?}, expected [{}]", self.shape(b), geo.out_c));
            }
        }
        let out = conv::forward(
            &geo,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape = vec![geo.n, geo.out_c, geo.out_h, geo.out_w];
        self.push(Tensor::new(shape, out)?, Op::Conv2d { x, w, b, stride, padding }, "conv2d")
    }

    /// Group normalization over `[N, C, ...]` with per-channel scale and shift.
    pub fn group_norm(&mut self, x: Var, groups: usize, scale: Var, shift: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(dim_err!("group_norm needs [N, C, ...], got {xs:?}"));
        }
        let c = xs[1];
        if groups == 0 || c % groups != 0 {
            return Err(arg_err!("{groups} groups do not divide {c} channels"));
        }
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(dim_err!("group_norm scale/shift must be [{c}]"));
        }
        let (out, mean, rstd) = kernels::group_norm_forward(
            self.value(x).data(),
            &xs,
            groups,
            self.value(scale).data(),
            self.value(shift).data(),
        );
        let op = Op::GroupNorm { x, scale, shift, groups, mean, rstd };
        self.push(Tensor::new(xs, out)?, op, "group_norm")
    }

    /// Group normalization followed by SiLU.
    pub fn norm_act(&mut self, x: Var, groups: usize, scale: Var, shift: Var) -> Result<Var> {
        let n = self.group_norm(x, groups, scale, shift)?;
        self.silu(n)
    }

    /// Max-stabilized softmax along the last axis.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().ok_or_else(|| arg_err!("softmax of a scalar"))?;
        let mut out = v.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            if max == T::neg_infinity() {
                return Err(arg_err!("softmax row has no finite logit"));
            }
            let mut total = T::zero();
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total = total + *e;
            }
            for e in row.iter_mut() {
                *e = *e / total;
            }
        }
        let shape = v.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax(x), "softmax")
    }

    /// Batched product of `[B, M, K]`-style operands, either side optionally transposed.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(dim_err!("bmm operands {sa:?} and {sb:?}"));
        }
        let (m, k) = if trans_a { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return Err(dim_err!("bmm inner extents {k} vs {k2}"));
        }
        let batch = sa[0];
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let av = kernels::view(&da[i * sa[1] * sa[2]..(i + 1) * sa[1] * sa[2]], sa[1], sa[2], trans_a);
            let bv = kernels::view(&db[i * sb[1] * sb[2]..(i + 1) * sb[1] * sb[2]], sb[1], sb[2], trans_b);
            gemm(av, bv, &mut out[i * m * n..(i + 1) * m * n], T::zero());
        }
        self.push(Tensor::new(vec![batch, m, n], out)?, Op::Bmm { a, b, trans_a, trans_b }, "bmm")
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(arg_err!("invalid permutation {perm:?} for rank {}", shape.len()));
        }
        let (data, out_shape) = kernels::permute(self.value(x).data(), &shape, perm);
        self.push(Tensor::new(out_shape, data)?, Op::Permute { x, perm: perm.to_vec() }, "permute")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| arg_err!("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(arg_err!("concat axis {axis} out of range for rank {}", first.len()));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err!("concat along {axis}: {first:?} vs {s:?}"));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let d = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * d..(o + 1) * d]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, "concat")
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.nchw(x, "upsample_nearest")?;
        if factor == 0 {
            return Err(arg_err!("upsample factor must be positive"));
        }
        let (oh, ow) = (s[2] * factor, s[3] * factor);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); s[0] * s[1] * oh * ow];
        for (plane, dst) in out.chunks_exact_mut(oh * ow).enumerate() {
            let p = &src[plane * s[2] * s[3]..(plane + 1) * s[2] * s[3]];
            for i in 0..oh {
                for j in 0..ow {
                    dst[i * ow + j] = p[(i / factor) * s[3] + j / factor];
                }
            }
        }
        self.push(Tensor::new(vec![s[0], s[1], oh, ow], out)?, Op::UpsampleNearest { x, factor }, "upsample")
    }

    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.nchw(x, "avg_pool")?;
        if factor == 0 || s[2] % factor != 0 || s[3] % factor != 0 {
            return Err(arg_err!("pool factor {factor} does not divide {}x{}", s[2], s[3]));
        }
        let out = kernels::avg_pool(self.value(x).data(), s[0] * s[1], s[2], s[3], factor);
        let shape = vec![s[0], s[1], s[2] / factor, s[3] / factor];
        self.push(Tensor::new(shape, out)?, Op::AvgPool { x, factor }, "avg_pool")
    }

    /// Adds a per-sample, per-channel shift `v: [N, C]` to `x: [N, C, H, W]`.
    pub fn add_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let s = self.nchw(x, "add_channel")?;
        if self.shape(v) != [s[0], s[1]] {
            return Err(dim_err!("add_channel shift {:?} for input {s:?}", self.shape(v)));
        }
        let hw = s[2] * s[3];
        let shift = self.value(v).data();
        let mut out = self.value(x).data().to_vec();
        for (plane, chunk) in out.chunks_exact_mut(hw).enumerate() {
            let d = shift[plane];
            chunk.iter_mut().for_each(|e| *e = *e + d);
        }
        self.push(Tensor::new(s, out)?, Op::AddChannel { x, v }, "add_channel")
    }

    /// Adds `bias: [B / group, Lk]` to every query row of `scores: [B, Lq, Lk]`.
    pub fn add_key_bias(&mut self, scores: Var, bias: Var, group: usize) -> Result<Var> {
        let s = self.shape(scores).to_vec();
        let bs = self.shape(bias).to_vec();
        if s.len() != 3 || group == 0 || s[0] % group != 0 || bs != [s[0] / group, s[2]] {
            return Err(dim_err!("key bias {bs:?} cannot bias scores {s:?} (group {group})"));
        }
        let (lq, lk) = (s[1], s[2]);
        let bias_data = self.value(bias).data();
        let mut out = self.value(scores).data().to_vec();
        for (bq, row) in out.chunks_exact_mut(lk).enumerate() {
            let b = bq / lq / group;
            for (o, &bb) in row.iter_mut().zip(&bias_data[b * lk..(b + 1) * lk]) {
                *o = *o + bb;
            }
        }
        self.push(Tensor::new(s, out)?, Op::AddKeyBias { scores, bias, group }, "add_key_bias")
    }

    /// Spatial crop of `[N, C, H, W]` to `height × width` starting at `(top, left)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var> {
        let s = self.nchw(x, "crop")?;
        if height == 0 || width == 0 || top + height > s[2] || left + width > s[3] {
            return Err(arg_err!("crop {height}x{width}@({top},{left}) outside {}x{}", s[2], s[3]));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(s[0] * s[1] * height * width);
        for plane in 0..s[0] * s[1] {
            for i in 0..height {
                let start = plane * s[2] * s[3] + (top + i) * s[3] + left;
                out.extend_from_slice(&src[start..start + width]);
            }
        }
        self.push(Tensor::new(vec![s[0], s[1], height, width], out)?, Op::Crop { x, top, left }, "crop")
    }

    fn nchw(&self, x: Var, what: &str) -> Result<Vec<usize>> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(dim_err!("{what} expects [N, C, H, W], got {s:?}"));
        }
        Ok(s.to_vec())
    }

    /// Populates gradients of the scalar `root` and consumes the graph.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.run_backward(root, false)
    }

    /// Like [`Graph::backward`] but leaves the graph usable for another pass.
    pub fn backward_retained(&mut self, root: Var) -> Result<()> {
        self.run_backward(root, true)
    }

    fn run_backward(&mut self, root: Var, retain: bool) -> Result<()> {
        if self.consumed {
            return Err(Error::State("graph was consumed by an earlier backward pass".into()));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(arg_err!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        self.grads = grads;
        if !retain {
            self.consumed = true;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        // Gradient buffers are moved out while an op writes into them and moved
        // back afterwards; a repeated input simply receives two contributions.
        let take = |grads: &mut [Option<Vec<T>>], v: Var| -> Option<Vec<T>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            Some(grads[v.0].take().unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.len()]))
        };
        let put = |grads: &mut [Option<Vec<T>>], v: Var, buf: Option<Vec<T>>| {
            let Some(buf) = buf else { return };
            match &mut grads[v.0] {
                Some(existing) => kernels::axpy(existing, &buf, T::one()),
                slot => *slot = Some(buf),
            }
        };
        macro_rules! with_grad {
            ($v:expr, |$buf:ident| $body:expr) => {
                if let Some(mut owned) = take(grads, $v) {
                    {
                        let $buf: &mut [T] = &mut owned;
                        $body
                    }
                    put(grads, $v, Some(owned));
                }
            };
        }
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                with_grad!(*a, |ga| kernels::axpy(ga, g, T::one()));
                with_grad!(*b, |gb| kernels::axpy(gb, g, T::one()));
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |ga| kernels::axpy(ga, g, T::one()));
                with_grad!(*b, |gb| kernels::axpy(gb, g, -T::one()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                with_grad!(*a, |ga| for k in 0..g.len() {
                    ga[k] = ga[k] + g[k] * vb[k];
                });
                with_grad!(*b, |gb| for k in 0..g.len() {
                    gb[k] = gb[k] + g[k] * va[k];
                });
            }
            Op::Scale(a, c) => with_grad!(*a, |ga| kernels::axpy(ga, g, *c)),
            Op::AddScalar(a) => with_grad!(*a, |ga| kernels::axpy(ga, g, T::one())),
            Op::Abs(a) => {
                let va = val(*a);
                with_grad!(*a, |ga| for k in 0..g.len() {
                    let s = if va[k] > T::zero() {
                        T::one()
                    } else if va[k] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    ga[k] = ga[k] + g[k] * s;
                });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                with_grad!(*a, |ga| for k in 0..g.len() {
                    ga[k] = ga[k] + g[k] * y[k] * (T::one() - y[k]);
                });
            }
            Op::Silu(a) => {
                let va = val(*a);
                with_grad!(*a, |ga| for k in 0..g.len() {
                    let s = kernels::sigmoid(va[k]);
                    ga[k] = ga[k] + g[k] * s * (T::one() + va[k] * (T::one() - s));
                });
            }
            Op::LnEps(a, eps) => {
                let va = val(*a);
                with_grad!(*a, |ga| for k in 0..g.len() {
                    ga[k] = ga[k] + g[k] / (va[k] + *eps);
                });
            }
            Op::Map { input, derivative } => with_grad!(*input, |ga| for k in 0..g.len() {
                ga[k] = ga[k] + g[k] * derivative[k];
            }),
            Op::Sum(a) => with_grad!(*a, |ga| ga.iter_mut().for_each(|e| *e = *e + g[0])),
            Op::Mean(a) => {
                let d = g[0] / T::of(val(*a).len() as f64);
                with_grad!(*a, |ga| ga.iter_mut().for_each(|e| *e = *e + d));
            }
            Op::Linear { x, w, b } => {
                let ws = nodes[w.0].value.shape();
                let (d_out, d_in) = (ws[0], ws[1]);
                let rows = g.len() / d_out;
                with_grad!(*x, |gx| gemm(
                    MatRef::row_major(g, rows, d_out),
                    MatRef::row_major(val(*w), d_out, d_in),
                    gx,
                    T::one()
                ));
                with_grad!(*w, |gw| gemm(
                    MatRef::row_major(g, rows, d_out).t(),
                    MatRef::row_major(val(*x), rows, d_in),
                    gw,
                    T::one()
                ));
                if let Some(b) = b {
                    with_grad!(*b, |gb| for row in g.chunks_exact(d_out) {
                        kernels::axpy(gb, row, T::one());
                    });
                }
            }
            Op::Conv2d { x, w, b, stride, padding } => {
                let geo = conv::Geometry::new(nodes[x.0].value.shape(), nodes[w.0].value.shape(), *stride, *padding)
                    .expect("geometry validated in forward");
                let mut gx = take(grads, *x);
                let mut gw = take(grads, *w);
                let mut gb = b.and_then(|b| take(grads, b));
                conv::backward(&geo, val(*x), val(*w), g, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                put(grads, *x, gx);
                put(grads, *w, gw);
                if let Some(b) = b {
                    put(grads, *b, gb);
                }
            }
            Op::GroupNorm { x, scale, shift, groups, mean, rstd } => {
                let mut gx = take(grads, *x);
                let mut gs = take(grads, *scale);
                let mut gt = take(grads, *shift);
                kernels::group_norm_backward(
                    val(*x),
                    nodes[x.0].value.shape(),
                    *groups,
                    val(*scale),
                    mean,
                    rstd,
                    g,
                    gx.as_deref_mut(),
                    gs.as_deref_mut(),
                    gt.as_deref_mut(),
                );
                put(grads, *x, gx);
                put(grads, *scale, gs);
                put(grads, *shift, gt);
            }
            Op::Softmax(a) => {
                let d = *out.shape().last().unwrap();
                let y = out.data();
                with_grad!(*a, |ga| for r in 0..y.len() / d {
                    let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&p, &q)| s + p * q);
                    for k in 0..d {
                        ga[r * d + k] = ga[r * d + k] + yr[k] * (gr[k] - dot);
                    }
                });
            }
            Op::Bmm { a, b, trans_a, trans_b } => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, n) = (out.shape()[1], out.shape()[2]);
                let (ea, eb) = (sa[1] * sa[2], sb[1] * sb[2]);
                for bi in 0..sa[0] {
                    let gc = MatRef::row_major(&g[bi * m * n..(bi + 1) * m * n], m, n);
                    let av = kernels::view(&val(*a)[bi * ea..(bi + 1) * ea], sa[1], sa[2], *trans_a);
                    let bv = kernels::view(&val(*b)[bi * eb..(bi + 1) * eb], sb[1], sb[2], *trans_b);
                    with_grad!(*a, |ga| {
                        let dst = &mut ga[bi * ea..(bi + 1) * ea];
                        if *trans_a {
                            gemm(bv, gc.t(), dst, T::one());
                        } else {
                            gemm(gc, bv.t(), dst, T::one());
                        }
                    });
                    with_grad!(*b, |gb| {
                        let dst = &mut gb[bi * eb..(bi + 1) * eb];
                        if *trans_b {
                            gemm(gc.t(), av, dst, T::one());
                        } else {
                            gemm(av.t(), gc, dst, T::one());
                        }
                    });
                }
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (back, _) = kernels::permute(g, out.shape(), &inverse);
                with_grad!(*x, |gx| kernels::axpy(gx, &back, T::one()));
            }
            Op::Reshape(x) => with_grad!(*x, |gx| kernels::axpy(gx, g, T::one())),
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let d = nodes[v.0].value.shape()[*axis] * inner;
                    with_grad!(v, |gv| for o in 0..outer {
                        kernels::axpy(
                            &mut gv[o * d..(o + 1) * d],
                            &g[o * total + offset..o * total + offset + d],
                            T::one(),
                        );
                    });
                    offset += d;
                }
            }
            Op::UpsampleNearest { x, factor } => {
                let s = nodes[x.0].value.shape();
                let (h, w) = (s[2], s[3]);
                let ow = w * factor;
                with_grad!(*x, |gx| for plane in 0..s[0] * s[1] {
                    let src = &g[plane * h * w * factor * factor..(plane + 1) * h * w * factor * factor];
                    for i in 0..h * factor {
                        for j in 0..ow {
                            let d = &mut gx[plane * h * w + (i / factor) * w + j / factor];
                            *d = *d + src[i * ow + j];
                        }
                    }
                });
            }
            Op::AvgPool { x, factor } => {
                let s = nodes[x.0].value.shape();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (h / factor, w / factor);
                let inv = T::one() / T::of((factor * factor) as f64);
                with_grad!(*x, |gx| for plane in 0..s[0] * s[1] {
                    for i in 0..h {
                        for j in 0..w {
                            let d = &mut gx[plane * h * w + i * w + j];
                            *d = *d + g[plane * oh * ow + (i / factor) * ow + j / factor] * inv;
                        }
                    }
                });
            }
            Op::AddChannel { x, v } => {
                let s = out.shape();
                let hw = s[2] * s[3];
                with_grad!(*x, |gx| kernels::axpy(gx, g, T::one()));
                with_grad!(*v, |gv| for (plane, chunk) in g.chunks_exact(hw).enumerate() {
                    gv[plane] = gv[plane] + chunk.iter().fold(T::zero(), |a, &b| a + b);
                });
            }
            Op::AddKeyBias { scores, bias, group } => {
                let s = out.shape();
                let (lq, lk) = (s[1], s[2]);
                with_grad!(*scores, |gs| kernels::axpy(gs, g, T::one()));
                with_grad!(*bias, |gb| for (bq, row) in g.chunks_exact(lk).enumerate() {
                    let b = bq / lq / group;
                    kernels::axpy(&mut gb[b * lk..(b + 1) * lk], row, T::one());
                });
            }
            Op::Crop { x, top, left } => {
                let s = nodes[x.0].value.shape();
                let (h, w) = (out.shape()[2], out.shape()[3]);
                with_grad!(*x, |gx| for plane in 0..s[0] * s[1] {
                    for i in 0..h {
                        let dst = plane * s[2] * s[3] + (top + i) * s[3] + left;
                        let src = (plane * h + i) * w;
                        kernels::axpy(&mut gx[dst..dst + w], &g[src..src + w], T::one());
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests;
