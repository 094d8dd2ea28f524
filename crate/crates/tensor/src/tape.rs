//! Operation record and reverse-mode gradient propagation.

use crate::kernels::{self, gemm};
use crate::{Result, Scalar, Tensor, TensorError};

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
    MatMul { a: usize, b: usize },
    BatchMatMul { a: usize, b: usize, tb: bool, alpha: T },
    AddBias { x: usize, bias: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: T },
    Softmax { x: usize },
    Sigmoid { x: usize },
    Permute { x: usize, axes: Vec<usize> },
    Reshape { x: usize },
    Concat { parts: Vec<usize> },
    Slice { x: usize, start: usize },
    Stack { parts: Vec<usize>, axis: usize },
    Gather { x: usize, rows: Vec<Option<usize>> },
    SumAll { x: usize },
    MaskedMse { pred: usize, target: Vec<T>, mask: Vec<bool>, count: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed operations.
///
/// Values are immutable once recorded. A tape is built and consumed by one
/// thread; independent forward passes use independent tapes.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    visited: Vec<usize>,
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn lead(shape: &[usize]) -> &[usize] {
    &shape[..shape.len().saturating_sub(1)]
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            visited: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.grad().is_none());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let needs = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.push(Tensor::from_parts(shape, data), op, needs)
    }

    /// Records a differentiable input (a parameter or a checked variable).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.take_grad();
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.take_grad();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Node indices visited by the last `backward`, in visit order.
    pub fn backward_trace(&self) -> &[usize] {
        &self.visited
    }

    // ----- forward operations -----

    /// Matrix product of `a[p×q]` and `b[q×r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); p * r];
        gemm(
            T::one(),
            self.nodes[a.0].value.data(),
            (p, q),
            false,
            self.nodes[b.0].value.data(),
            (q, r),
            false,
            T::zero(),
            &mut out,
        );
        Ok(self.derived(vec![p, r], out, Op::MatMul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// Batched `alpha·a_i·b_i` (or `alpha·a_i·b_iᵀ` when `transpose_b`) over
    /// the leading dimension of two rank-3 tensors.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool, alpha: T) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "batch_matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (batch, p, q) = (sa[0], sa[1], sa[2]);
        let (kb, r) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != q {
            return Err(mismatch());
        }
        let mut out = vec![T::zero(); batch * p * r];
        {
            let ad = self.nodes[a.0].value.data();
            let bd = self.nodes[b.0].value.data();
            for i in 0..batch {
                gemm(
                    alpha,
                    &ad[i * p * q..(i + 1) * p * q],
                    (p, q),
                    false,
                    &bd[i * q * r..(i + 1) * q * r],
                    (sb[1], sb[2]),
                    transpose_b,
                    T::zero(),
                    &mut out[i * p * r..(i + 1) * p * r],
                );
            }
        }
        Ok(self.derived(
            vec![batch, p, r],
            out,
            Op::BatchMatMul {
                a: a.0,
                b: b.0,
                tb: transpose_b,
                alpha,
            },
            &[a.0, b.0],
        ))
    }

    /// Adds `bias[d]` to every row of `x[..×d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        let d = last_dim(&sx);
        if sb.len() != 1 || sb[0] != d || sx.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let bd = self.nodes[bias.0].value.data();
        let mut out = self.nodes[x.0].value.data().to_vec();
        for row in out.chunks_mut(d) {
            kernels::add_into(row, bd);
        }
        Ok(self.derived(sx, out, Op::AddBias { x: x.0, bias: bias.0 }, &[x.0, bias.0]))
    }

    /// `x·w (+ bias)` applied to the last dimension of `x`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.is_empty() || sw.len() != 2 || last_dim(&sx) != sw[0] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: sx,
                rhs: sw,
            });
        }
        let rows: usize = lead(&sx).iter().product();
        let flat = if sx.len() == 2 { x } else { self.reshape(x, &[rows, sw[0]])? };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = bias {
            y = self.add_bias(y, b)?;
        }
        if sx.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = lead(&sx).to_vec();
        out_shape.push(sw[1]);
        self.reshape(y, &out_shape)
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: sa,
                rhs: sb,
            });
        }
        let out = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.derived(sa, out, op, &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.nodes[x.0].value.data().iter().map(|v| *v * c).collect();
        self.derived(shape, out, Op::Scale { x: x.0, c }, &[x.0])
    }

    /// Softmax over the last dimension, stabilised by the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(TensorError::Rank {
                op: "softmax_rows",
                expected: 1,
                shape,
            });
        }
        let mut out = self.nodes[x.0].value.data().to_vec();
        kernels::softmax_rows(&mut out, last_dim(&shape));
        Ok(self.derived(shape, out, Op::Softmax { x: x.0 }, &[x.0]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|v| T::one() / (T::one() + (-*v).exp()))
            .collect();
        self.derived(shape, out, Op::Sigmoid { x: x.0 }, &[x.0])
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::InvalidAxes {
                op: "permute",
                axes: axes.to_vec(),
                rank: shape.len(),
            });
        }
        let out = kernels::permute(self.nodes[x.0].value.data(), &shape, axes);
        let out_shape = axes.iter().map(|&a| shape[a]).collect();
        Ok(self.derived(
            out_shape,
            out,
            Op::Permute {
                x: x.0,
                axes: axes.to_vec(),
            },
            &[x.0],
        ))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshape(shape)?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(value, Op::Reshape { x: x.0 }, needs))
    }

    /// Concatenates along the last dimension; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Empty("concat_last"))?;
        let lead_shape = lead(self.shape(*first)).to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || lead(s) != lead_shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(last_dim(s));
        }
        let rows: usize = lead_shape.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead_shape;
        shape.push(total);
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.derived(shape, out, Op::Concat { parts: idx.clone() }, &idx))
    }

    /// Columns `start..start+len` of the last dimension.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let w = last_dim(&shape);
        if shape.is_empty() || len == 0 || start + len > w {
            return Err(TensorError::ShapeMismatch {
                op: "slice_last",
                lhs: shape,
                rhs: vec![start, len],
            });
        }
        let data = self.nodes[x.0].value.data();
        let out = data
            .chunks(w)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        Ok(self.derived(out_shape, out, Op::Slice { x: x.0, start }, &[x.0]))
    }

    /// Splits the last dimension into consecutive pieces of the given widths.
    pub fn split_last(&mut self, x: Var, widths: &[usize]) -> Result<Vec<Var>> {
        let w = last_dim(self.shape(x));
        if widths.iter().sum::<usize>() != w {
            return Err(TensorError::ShapeMismatch {
                op: "split_last",
                lhs: self.shape(x).to_vec(),
                rhs: widths.to_vec(),
            });
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &len in widths {
            out.push(self.slice_last(x, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Stacks equally shaped tensors along a new axis at position `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Empty("stack"))?;
        let shape = self.shape(*first).to_vec();
        if axis > shape.len() {
            return Err(TensorError::InvalidAxes {
                op: "stack",
                axes: vec![axis],
                rank: shape.len(),
            });
        }
        for p in parts {
            if self.shape(*p) != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: shape,
                    rhs: self.shape(*p).to_vec(),
                });
            }
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * inner * parts.len());
        for o in 0..outer {
            for p in parts {
                out.extend_from_slice(&self.nodes[p.0].value.data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, parts.len());
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.derived(out_shape, out, Op::Stack { parts: idx.clone(), axis }, &idx))
    }

    /// Selects rows of `x[N×d]`; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, rows: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::Rank {
                op: "gather_rows",
                expected: 2,
                shape,
            });
        }
        if rows.is_empty() {
            return Err(TensorError::Empty("gather_rows"));
        }
        let (n, d) = (shape[0], shape[1]);
        let data = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for r in rows {
            match *r {
                Some(i) if i >= n => return Err(TensorError::IndexOutOfRange { index: i, rows: n }),
                Some(i) => out.extend_from_slice(&data[i * d..(i + 1) * d]),
                None => out.extend(std::iter::repeat_n(T::zero(), d)),
            }
        }
        Ok(self.derived(
            vec![rows.len(), d],
            out,
            Op::Gather {
                x: x.0,
                rows: rows.to_vec(),
            },
            &[x.0],
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().copied().sum();
        self.derived(Vec::new(), vec![s], Op::SumAll { x: x.0 }, &[x.0])
    }

    /// Mean squared error over the cells where `mask` is set.
    pub fn masked_mse(&mut self, pred: Var, target: &[T], mask: &[bool]) -> Result<Var> {
        let n = self.nodes[pred.0].value.numel();
        if target.len() != n || mask.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "masked_mse",
                lhs: self.shape(pred).to_vec(),
                rhs: vec![target.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(TensorError::Empty("masked_mse"));
        }
        let p = self.nodes[pred.0].value.data();
        let mut sum = T::zero();
        for i in 0..n {
            if mask[i] {
                let d = p[i] - target[i];
                sum = sum + d * d;
            }
        }
        let loss = sum / T::from_f64(count as f64);
        Ok(self.derived(
            Vec::new(),
            vec![loss],
            Op::MaskedMse {
                pred: pred.0,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            &[pred.0],
        ))
    }

    // ----- reverse pass -----

    /// Propagates d(loss)/d(node) to every node recorded before `loss`.
    ///
    /// Gradients from earlier calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.visited.clear();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.visited.push(i);
            backprop(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn slot<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    i: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[i].needs_grad {
        return None;
    }
    let n = nodes[i].value.numel();
    Some(grads[i].get_or_insert_with(|| vec![T::zero(); n]))
}

fn backprop<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let node = &nodes[i];
    let val = |j: usize| nodes[j].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (p, q) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            let r = nodes[*b].value.shape()[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm(T::one(), g, (p, r), false, val(*b), (q, r), true, T::one(), ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm(T::one(), val(*a), (p, q), true, g, (p, r), false, T::one(), gb);
            }
        }
        Op::BatchMatMul { a, b, tb, alpha } => {
            let sa = nodes[*a].value.shape();
            let sb = nodes[*b].value.shape();
            let (batch, p, q) = (sa[0], sa[1], sa[2]);
            let (b1, b2) = (sb[1], sb[2]);
            let r = if *tb { b1 } else { b2 };
            if let Some(ga) = slot(nodes, grads, *a) {
                for k in 0..batch {
                    let gk = &g[k * p * r..(k + 1) * p * r];
                    let bk = &val(*b)[k * b1 * b2..(k + 1) * b1 * b2];
                    // dA = α·dC·op(B)ᵀ
                    gemm(*alpha, gk, (p, r), false, bk, (b1, b2), !*tb, T::one(), &mut ga[k * p * q..(k + 1) * p * q]);
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for k in 0..batch {
                    let gk = &g[k * p * r..(k + 1) * p * r];
                    let ak = &val(*a)[k * p * q..(k + 1) * p * q];
                    let out = &mut gb[k * b1 * b2..(k + 1) * b1 * b2];
                    if *tb {
                        // B is r×q: dB = α·dCᵀ·A
                        gemm(*alpha, gk, (p, r), true, ak, (p, q), false, T::one(), out);
                    } else {
                        // dB = α·Aᵀ·dC
                        gemm(*alpha, ak, (p, q), true, gk, (p, r), false, T::one(), out);
                    }
                }
            }
        }
        Op::AddBias { x, bias } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                kernels::add_into(gx, g);
            }
            let d = nodes[*bias].value.numel();
            if let Some(gb) = slot(nodes, grads, *bias) {
                for row in g.chunks(d) {
                    kernels::add_into(gb, row);
                }
            }
        }
        Op::Add { a, b } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                kernels::add_into(ga, g);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                kernels::add_into(gb, g);
            }
        }
        Op::Sub { a, b } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                kernels::add_into(ga, g);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for (d, s) in gb.iter_mut().zip(g) {
                    *d = *d - *s;
                }
            }
        }
        Op::Mul { a, b } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((d, s), y) in ga.iter_mut().zip(g).zip(val(*b)) {
                    *d = *d + *s * *y;
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for ((d, s), x) in gb.iter_mut().zip(g).zip(val(*a)) {
                    *d = *d + *s * *x;
                }
            }
        }
        Op::Scale { x, c } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for (d, s) in gx.iter_mut().zip(g) {
                    *d = *d + *s * *c;
                }
            }
        }
        Op::Softmax { x } => {
            let w = last_dim(node.value.shape());
            if let Some(gx) = slot(nodes, grads, *x) {
                let y = node.value.data();
                for ((dx, dy), yr) in gx.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                    let dot: T = dy.iter().zip(yr).map(|(a, b)| *a * *b).sum();
                    for ((d, gy), yv) in dx.iter_mut().zip(dy).zip(yr) {
                        *d = *d + *yv * (*gy - dot);
                    }
                }
            }
        }
        Op::Sigmoid { x } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for ((d, s), y) in gx.iter_mut().zip(g).zip(node.value.data()) {
                    *d = *d + *s * *y * (T::one() - *y);
                }
            }
        }
        Op::Permute { x, axes } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let back = kernels::permute(g, node.value.shape(), &kernels::invert_axes(axes));
                kernels::add_into(gx, &back);
            }
        }
        Op::Reshape { x } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                kernels::add_into(gx, g);
            }
        }
        Op::Concat { parts } => {
            let total = last_dim(node.value.shape());
            let mut offset = 0;
            for p in parts {
                let w = last_dim(nodes[*p].value.shape());
                if let Some(gp) = slot(nodes, grads, *p) {
                    for (dst, row) in gp.chunks_mut(w).zip(g.chunks(total)) {
                        kernels::add_into(dst, &row[offset..offset + w]);
                    }
                }
                offset += w;
            }
        }
        Op::Slice { x, start } => {
            let len = last_dim(node.value.shape());
            let w = last_dim(nodes[*x].value.shape());
            if let Some(gx) = slot(nodes, grads, *x) {
                for (dst, row) in gx.chunks_mut(w).zip(g.chunks(len)) {
                    kernels::add_into(&mut dst[*start..*start + len], row);
                }
            }
        }
        Op::Stack { parts, axis } => {
            let shape = nodes[parts[0]].value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis..].iter().product();
            let count = parts.len();
            for (pi, p) in parts.iter().enumerate() {
                if let Some(gp) = slot(nodes, grads, *p) {
                    for o in 0..outer {
                        let src = &g[(o * count + pi) * inner..(o * count + pi + 1) * inner];
                        kernels::add_into(&mut gp[o * inner..(o + 1) * inner], src);
                    }
                }
            }
        }
        Op::Gather { x, rows } => {
            let d = nodes[*x].value.shape()[1];
            if let Some(gx) = slot(nodes, grads, *x) {
                for (k, r) in rows.iter().enumerate() {
                    if let Some(r) = r {
                        kernels::add_into(&mut gx[r * d..(r + 1) * d], &g[k * d..(k + 1) * d]);
                    }
                }
            }
        }
        Op::SumAll { x } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().for_each(|d| *d = *d + g[0]);
            }
        }
        Op::MaskedMse {
            pred,
            target,
            mask,
            count,
        } => {
            let scale = g[0] * T::from_f64(2.0 / *count as f64);
            if let Some(gp) = slot(nodes, grads, *pred) {
                let p = val(*pred);
                for k in 0..gp.len() {
                    if mask[k] {
                        gp[k] = gp[k] + scale * (p[k] - target[k]);
                    }
                }
            }
        }
    }
}
