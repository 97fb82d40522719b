use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Real;
use crate::error::{Error, Result};

/// Dense row-major array. Immutable once produced by an op; gradients live
/// on the [`Tape`](super::Tape) that recorded the op.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn from_slice(shape: &[usize], data: &[T]) -> Result<Self> {
        Self::new(shape, data.to_vec())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(&[rows.len(), cols], data)
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::c(z * std)
            })
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    /// Normal(0, std) truncated to two standard deviations by resampling.
    pub fn trunc_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break T::c(z * std);
                }
            })
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| T::c(rng.random_range(lo..hi))).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn item(&self) -> T {
        self.data[0]
    }

    /// Extent of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: T) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.last_dim();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::c(x.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "compare {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        broadcast_binary(self, other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        broadcast_binary(self, other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        broadcast_binary(self, other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::dim("transpose needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!("invalid permutation {perm:?} for rank {r}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.numel());
        for_each_index(&out_shape, |_, idx| {
            let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
        });
        Ok(Self { shape: out_shape, data })
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::dim(format!("axis {axis} out of range for rank {}", self.rank())));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Self { shape, data })
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(Error::dim(format!(
                "slice {start}..{} of axis {axis} in {:?}",
                start + len,
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        matmul(self, other, false, false)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Calls `f(linear_index, multi_index)` for every index of `shape` in row-major order.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let numel: usize = shape.iter().product();
    if numel == 0 {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    for lin in 0..numel {
        f(lin, &idx);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside the broadcast `out` shape (0 on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| if i < pad || shape[i - pad] == 1 { 0 } else { own[i - pad] })
        .collect()
}

/// Visits every element of the broadcast output with the matching offsets into
/// `a` and `b`. The innermost axis runs as a tight loop.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out.iter().product();
    if numel == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let r = out.len();
    let inner = out[r - 1];
    let (ia, ib) = (sa[r - 1], sb[r - 1]);
    let outer_shape = &out[..r - 1];
    let mut idx = vec![0usize; r - 1];
    let mut lin = 0;
    for _ in 0..numel / inner {
        let oa: usize = idx.iter().zip(sa).map(|(i, s)| i * s).sum();
        let ob: usize = idx.iter().zip(sb).map(|(i, s)| i * s).sum();
        for k in 0..inner {
            f(lin + k, oa + k * ia, ob + k * ib);
        }
        lin += inner;
        for ax in (0..r - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < outer_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| op(x, y)).collect();
        return Ok(Tensor { shape: a.shape.clone(), data });
    }
    let out = broadcast_shape(&a.shape, &b.shape)?;
    let sa = broadcast_strides(&a.shape, &out);
    let sb = broadcast_strides(&b.shape, &out);
    let mut data = vec![T::zero(); out.iter().product()];
    for_each_broadcast(&out, &sa, &sb, |i, ia, ib| data[i] = op(a.data[ia], b.data[ib]));
    Ok(Tensor { shape: out, data })
}

/// Sum `grad` (shaped like a broadcast output) back down to `shape`.
pub(crate) fn reduce_to_shape<T: Real>(grad: &[T], out: &[usize], shape: &[usize]) -> Vec<T> {
    if out == shape {
        return grad.to_vec();
    }
    let numel: usize = shape.iter().product();
    let mut acc = vec![T::zero(); numel];
    let s = broadcast_strides(shape, out);
    let zeros = vec![0; out.len()];
    for_each_broadcast(out, &s, &zeros, |i, ia, _| acc[ia] = acc[ia] + grad[i]);
    acc
}

/// Geometry of a (possibly batched, possibly transposed) matmul operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatView {
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
    /// Element stride between batch items; 0 when broadcast.
    pub bs: usize,
}

impl MatView {
    /// View of a tensor whose last two axes form the matrix, optionally transposed.
    pub fn of(shape: &[usize], transpose: bool) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::dim(format!("matmul operand needs rank >= 2, got {shape:?}")));
        }
        let r = shape.len();
        let (m, n) = (shape[r - 2], shape[r - 1]);
        let (rows, cols, rs, cs) = if transpose {
            (n, m, 1, n as isize)
        } else {
            (m, n, n as isize, 1)
        };
        Ok(Self { rows, cols, rs, cs, bs: m * n })
    }
}

pub(crate) struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub batch: usize,
    pub a: MatView,
    pub b: MatView,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

/// Batch rule: both operands share identical batch axes, or one of them is a
/// plain matrix broadcast over the other's batch.
pub(crate) fn plan_matmul(
    sa: &[usize],
    sb: &[usize],
    ta: bool,
    tb: bool,
) -> Result<MatmulPlan> {
    let mut a = MatView::of(sa, ta)?;
    let mut b = MatView::of(sb, tb)?;
    if a.cols != b.rows {
        return Err(Error::dim(format!(
            "matmul inner extents differ: {sa:?}{} x {sb:?}{}",
            if ta { "^T" } else { "" },
            if tb { "^T" } else { "" }
        )));
    }
    let batch_a = &sa[..sa.len() - 2];
    let batch_b = &sb[..sb.len() - 2];
    let batch_shape: Vec<usize> = if batch_a == batch_b {
        batch_a.to_vec()
    } else if batch_a.is_empty() {
        a.bs = 0;
        batch_b.to_vec()
    } else if batch_b.is_empty() {
        b.bs = 0;
        batch_a.to_vec()
    } else {
        return Err(Error::dim(format!("matmul batch axes differ: {sa:?} x {sb:?}")));
    };
    let batch = batch_shape.iter().product();
    let mut out_shape = batch_shape;
    out_shape.push(a.rows);
    out_shape.push(b.cols);
    Ok(MatmulPlan { out_shape, batch, m: a.rows, k: a.cols, n: b.cols, a, b })
}

/// `c[batch] (+)= a[batch] @ b[batch]` where every operand is a strided view.
///
/// `c` is always row-major contiguous per batch item with the given batch stride.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_batched<T: Real>(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    av: (isize, isize, usize),
    b: &[T],
    bv: (isize, isize, usize),
    c: &mut [T],
    cv: (isize, isize, usize),
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    for i in 0..batch {
        // SAFETY: offsets and strides come from plan_matmul for the shapes of
        // `a`, `b`, and `c`, so every addressed element is in bounds; `c` is a
        // distinct buffer from `a` and `b`.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                a.as_ptr().add(i * av.2),
                av.0,
                av.1,
                b.as_ptr().add(i * bv.2),
                bv.0,
                bv.1,
                beta,
                c.as_mut_ptr().add(i * cv.2),
                cv.0,
                cv.1,
            );
        }
        if k == 0 && !accumulate {
            for x in &mut c[i * cv.2..i * cv.2 + m * n] {
                *x = T::zero();
            }
        }
    }
}

pub(crate) fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let p = plan_matmul(&a.shape, &b.shape, ta, tb)?;
    let mut out = vec![T::zero(); p.out_shape.iter().product()];
    gemm_batched(
        p.batch,
        p.m,
        p.k,
        p.n,
        &a.data,
        (p.a.rs, p.a.cs, p.a.bs),
        &b.data,
        (p.b.rs, p.b.cs, p.b.bs),
        &mut out,
        (p.n as isize, 1, p.m * p.n),
        false,
    );
    Ok(Tensor { shape: p.out_shape, data: out })
}
