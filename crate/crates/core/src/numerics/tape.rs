//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every op appends one node to the tape. `backward` walks the nodes in
//! exact reverse order, summing each node's adjoint over all of its uses.

use super::tensor::{
    broadcast_shape, broadcast_strides, for_each_broadcast, gemm_batched, plan_matmul,
    reduce_to_shape, strides, Tensor,
};
use super::Real;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Tanh(Var),
    Gelu(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Slice { x: Var, axis: usize, start: usize },
    SumAxis { x: Var, axis: usize },
    BroadcastTo(Var),
    SumAll(Var),
    Embedding { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, rstd: Vec<T> },
    RmsNorm { x: Var, rstd: Vec<T> },
    Softmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Present iff `var` requires grad and the loss depends on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

const GELU_K: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::c(GELU_K) * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::c(GELU_K) * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::c(3.0 * GELU_K) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * du
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) @ op(b)` where `op` optionally swaps the last two axes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b), ta, tb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(perm)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Permute(a, perm.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(Error::dim("transpose needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).slice_axis(axis, start, len)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Slice { x: a, axis, start }, rg))
    }

    /// Index `index` along `axis`, dropping the axis.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.slice(a, axis, index, 1)?;
        let mut shape = self.shape(s).to_vec();
        shape.remove(axis);
        self.reshape(s, &shape)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).sum_axis(axis)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SumAxis { x: a, axis }, rg))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let out_shape = broadcast_shape(src.shape(), shape)?;
        if out_shape != shape {
            return Err(Error::dim(format!("cannot broadcast {:?} to {shape:?}", src.shape())));
        }
        let out = src.add(&Tensor::zeros(shape))?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::BroadcastTo(a), rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::SumAll(a), rg)
    }

    /// Rows of `table` (shape `[vocab, d]`) gathered by `ids`; output `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::dim("embedding table must be rank 2"));
        }
        let (vocab, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index(format!("token id {id} >= vocab {vocab}")));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(&[ids.len(), d], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Zero-mean, unit-variance over the last axis; `eps` is added inside the root.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let src = self.value(x);
        let d = src.last_dim();
        if src.rank() == 0 || d < 2 {
            return Err(Error::dim(format!("layer_norm needs last extent >= 2, got {:?}", src.shape())));
        }
        let eps = T::c(eps);
        let dn = T::c(d as f64);
        let rows = src.numel() / d;
        let mut out = Vec::with_capacity(src.numel());
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = src.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let denom = var + eps;
            let rs = if denom > T::zero() { T::one() / denom.sqrt() } else { T::zero() };
            rstd.push(rs);
            out.extend(row.iter().map(|&v| (v - mean) * rs));
        }
        let out = Tensor::new(src.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LayerNorm { x, rstd }, rg))
    }

    /// Layer norm followed by an optional per-feature gain and bias.
    pub fn layer_norm_affine(
        &mut self,
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let mut y = self.layer_norm(x, eps)?;
        if let Some(g) = gain {
            y = self.mul(y, g)?;
        }
        if let Some(b) = bias {
            y = self.add(y, b)?;
        }
        Ok(y)
    }

    /// Divide by the root-mean-square over the last axis; `eps` is added inside the root.
    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let src = self.value(x);
        let d = src.last_dim();
        if src.rank() == 0 {
            return Err(Error::dim("rms_norm needs rank >= 1"));
        }
        let eps = T::c(eps);
        let dn = T::c(d as f64);
        let rows = src.numel() / d;
        let mut out = Vec::with_capacity(src.numel());
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = src.row(r);
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn + eps;
            let rs = if ms > T::zero() { T::one() / ms.sqrt() } else { T::zero() };
            rstd.push(rs);
            out.extend(row.iter().map(|&v| v * rs));
        }
        let out = Tensor::new(src.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::RmsNorm { x, rstd }, rg))
    }

    /// Softmax over the last axis. With `causal`, the last two axes must be
    /// square and entry `(i, j)` with `j > i` is masked out.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let src = self.value(x);
        let d = src.last_dim();
        if src.rank() == 0 {
            return Err(Error::dim("softmax needs rank >= 1"));
        }
        if causal && (src.rank() < 2 || src.shape()[src.rank() - 2] != d) {
            return Err(Error::dim(format!("causal softmax needs square last axes, got {:?}", src.shape())));
        }
        let rows = src.numel() / d;
        let mut out = vec![T::zero(); src.numel()];
        for r in 0..rows {
            let row = src.row(r);
            let limit = if causal { r % d + 1 } else { d };
            let max = row[..limit].iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let dst = &mut out[r * d..(r + 1) * d];
            let mut total = T::zero();
            for j in 0..limit {
                let e = (row[j] - max).exp();
                dst[j] = e;
                total = total + e;
            }
            for v in &mut dst[..limit] {
                *v = *v / total;
            }
        }
        let out = Tensor::new(src.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let src = self.value(logits);
        if src.rank() != 2 {
            return Err(Error::dim(format!("logits must be rank 2, got {:?}", src.shape())));
        }
        let (rows, vocab) = (src.shape()[0], src.shape()[1]);
        if targets.len() != rows {
            return Err(Error::dim(format!("{} targets for {rows} rows", targets.len())));
        }
        if rows == 0 {
            return Err(Error::dim("cross_entropy over zero rows"));
        }
        let mut probs = vec![T::zero(); rows * vocab];
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= vocab {
                return Err(Error::Index(format!("target {t} >= vocab {vocab}")));
            }
            let row = src.row(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let z: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            total = total + (log_z - row[t]);
            for (p, &v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        let loss = Tensor::scalar(total / T::c(rows as f64));
        let rg = self.rg(&[logits]);
        Ok(self.push(
            loss,
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            rg,
        ))
    }

    /// Adjoints of every recorded value with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape(), g).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, d) in acc.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                if self.wants(*a) {
                    let ga = reduce_to_shape(g, out_shape, self.shape(*a));
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = reduce_to_shape(g, out_shape, self.shape(*b));
                    if negate {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = vec![T::zero(); va.numel()];
                let mut gb = vec![T::zero(); vb.numel()];
                if va.shape() == vb.shape() {
                    for i in 0..g.len() {
                        ga[i] = g[i] * vb.data()[i];
                        gb[i] = g[i] * va.data()[i];
                    }
                } else {
                    let sa = broadcast_strides(va.shape(), out_shape);
                    let sb = broadcast_strides(vb.shape(), out_shape);
                    let (da, db) = (va.data(), vb.data());
                    for_each_broadcast(out_shape, &sa, &sb, |i, ia, ib| {
                        ga[ia] = ga[ia] + g[i] * db[ib];
                        gb[ib] = gb[ib] + g[i] * da[ia];
                    });
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => {
                let ga = g.iter().map(|&x| x * *c).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga = g.iter().zip(y).map(|(&gi, &yi)| gi * (T::one() - yi * yi)).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let ga = g.iter().zip(x).map(|(&gi, &xi)| gi * gelu_grad(xi)).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let p = plan_matmul(va.shape(), vb.shape(), *ta, *tb).expect("planned at forward");
                let dc = (p.n as isize, 1, p.m * p.n);
                if self.wants(*a) {
                    // dA_eff = dC @ op(B)^T, written through A's own view.
                    let mut ga = vec![T::zero(); va.numel()];
                    gemm_batched(
                        p.batch,
                        p.m,
                        p.n,
                        p.k,
                        g,
                        dc,
                        vb.data(),
                        (p.b.cs, p.b.rs, p.b.bs),
                        &mut ga,
                        (p.a.rs, p.a.cs, p.a.bs),
                        true,
                    );
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    // dB_eff = op(A)^T @ dC
                    let mut gb = vec![T::zero(); vb.numel()];
                    gemm_batched(
                        p.batch,
                        p.k,
                        p.m,
                        p.n,
                        va.data(),
                        (p.a.cs, p.a.rs, p.a.bs),
                        g,
                        dc,
                        &mut gb,
                        (p.b.rs, p.b.cs, p.b.bs),
                        true,
                    );
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Permute(a, perm) => {
                let src_shape = self.shape(*a);
                let src_strides = strides(src_shape);
                let mut ga = vec![T::zero(); g.len()];
                let gather: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
                super::tensor::for_each_index(out_shape, |lin, idx| {
                    let off: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
                    ga[off] = g[lin];
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.shape(*x);
                let outer: usize = src_shape[..*axis].iter().product();
                let n = src_shape[*axis];
                let len = out_shape[*axis];
                let inner: usize = src_shape[axis + 1..].iter().product();
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SumAxis { x, axis } => {
                let src_shape = self.shape(*x);
                let outer: usize = src_shape[..*axis].iter().product();
                let n = src_shape[*axis];
                let inner: usize = src_shape[axis + 1..].iter().product();
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        let dst = (o * n + k) * inner;
                        gx[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::BroadcastTo(a) => {
                let ga = reduce_to_shape(g, out_shape, self.shape(*a));
                self.accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let ga = vec![g[0]; self.value(*a).numel()];
                self.accumulate(grads, *a, ga);
            }
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let d = t.shape()[1];
                let mut gt = vec![T::zero(); t.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for (dst, &src) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dst = *dst + src;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::LayerNorm { x, rstd } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let dn = T::c(d as f64);
                let mut gx = vec![T::zero(); g.len()];
                for (r, &rs) in rstd.iter().enumerate() {
                    let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                    let mean_g = gr.iter().copied().sum::<T>() / dn;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                    for j in 0..d {
                        gx[r * d + j] = rs * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RmsNorm { x, rstd } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let dn = T::c(d as f64);
                let mut gx = vec![T::zero(); g.len()];
                for (r, &rs) in rstd.iter().enumerate() {
                    let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                    for j in 0..d {
                        gx[r * d + j] = rs * (gr[j] - yr[j] * mean_gy);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut gx = vec![T::zero(); g.len()];
                for r in 0..g.len() / d {
                    let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let vocab = self.value(*logits).last_dim();
                let scale = g[0] / T::c(targets.len() as f64);
                let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * vocab + t] = gl[r * vocab + t] - scale;
                }
                self.accumulate(grads, *logits, gl);
            }
        }
    }
}
