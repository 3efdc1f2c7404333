//! Dense row-major tensors and the `PMT1` binary format.

use std::fmt::{Debug, Display};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::iter::Sum;
use std::path::Path;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{arg_err, dim_err, Error, Result};

/// Magic bytes opening every serialized tensor.
pub const PMT1_MAGIC: &[u8; 4] = b"PMT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Scalar types the engine computes in.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Sum + 'static
{
    const DTYPE: DType;

    /// `c = a * b + beta * c` on strided matrix views.
    ///
    /// # Safety
    /// Every index reachable through the given extents and strides must lie
    /// inside the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every element type")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("element converts to f64")
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Element> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Transposed view; no data moves.
    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

impl<T: Element> MatRef<'_, T> {
    fn to_row_major(self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            out.extend((0..self.cols).map(|c| self.data[r * self.rs + c * self.cs]));
        }
        out
    }
}

/// `c (m×n, row-major) = a·b + beta·c`.
pub fn gemm<T: Element>(a: MatRef<'_, T>, b: MatRef<'_, T>, c: &mut [T], beta: T) {
    assert_eq!(a.cols, b.rows, "gemm inner extents");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm output buffer");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v = *v * beta;
        }
        return;
    }
    assert!(a.max_index() < a.data.len() && b.max_index() < b.data.len());
    // Narrow outputs run faster as the transposed product.
    let swap = n < 32 && m >= 2 * n;
    let (a, b, m, n, rsc, csc) = if swap { (b.t(), a.t(), n, m, 1, n) } else { (a, b, m, n, n, 1) };
    // Packing a column-strided right operand is slow; copy it once instead.
    let owned;
    let b = if b.cs != 1 && b.rows * b.cols > 1024 {
        owned = b.to_row_major();
        MatRef::row_major(&owned, b.rows, b.cols)
    } else {
        b
    };
    // SAFETY: extents and strides were checked against the buffer lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(arg_err!("tensor extents must be positive, got {shape:?}"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err!(
                "shape {shape:?} needs {expected} elements, buffer holds {}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor { shape, data: (0..n).map(&mut f).collect() }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(arg_err!("item() on tensor of shape {:?}", self.shape))
        }
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(dim_err!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Serializes as `PMT1`: magic, dtype code, rank, u64-LE extents, LE payload.
    pub fn write_pmt1<W: Write>(&self, mut w: W) -> Result<()> {
        if self.shape.len() > u8::MAX as usize {
            return Err(arg_err!("rank {} does not fit the format", self.shape.len()));
        }
        let mut buf = Vec::with_capacity(6 + 8 * self.shape.len() + self.data.len() * T::DTYPE.size());
        buf.extend_from_slice(PMT1_MAGIC);
        buf.push(T::DTYPE.code());
        buf.push(self.shape.len() as u8);
        for &d in &self.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut buf);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a `PMT1` tensor, converting from the stored dtype if it differs.
    pub fn read_pmt1<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 6];
        r.read_exact(&mut head)?;
        if &head[..4] != PMT1_MAGIC {
            return Err(Error::Format("missing PMT1 magic".into()));
        }
        let dtype = DType::from_code(head[4])?;
        let rank = head[5] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut e = [0u8; 8];
            r.read_exact(&mut e)?;
            let d = u64::from_le_bytes(e);
            shape.push(usize::try_from(d).map_err(|_| Error::Format("extent overflow".into()))?);
        }
        let count: usize = shape.iter().product();
        let mut payload = vec![0u8; count * dtype.size()];
        r.read_exact(&mut payload)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        let data: Vec<T> = match dtype {
            DType::F32 => payload.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => payload.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_pmt1(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pmt1(BufReader::new(File::open(path)?))
    }
}
