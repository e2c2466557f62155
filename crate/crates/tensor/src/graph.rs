//! Dynamic computation tape.
//!
//! Nodes are appended in creation order, which is also a topological order,
//! so the backward pass is a single reverse sweep over the node list.

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    LogSoftmax(Var),
    LogSigmoid(Var),
    CausalSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Vec<(f64, f64)>,
    },
    Sum(Var),
    Mean(Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape. Build one per loss evaluation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the leaves of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

const LN_EPS: f64 = 1e-5;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable input; receives a gradient in [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        let mismatch = || TensorError::ShapeMismatch {
            op,
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = if trans_b {
            (tb.shape()[1], tb.shape()[0])
        } else {
            (tb.shape()[0], tb.shape()[1])
        };
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), trans_b, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, trans_b },
            rg,
        ))
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op_name, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Broadcast-add a `[n]` vector onto every row of `x: [.., n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let n = tx.cols();
        if tr.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: tx.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (v, r) in chunk.iter_mut().zip(tr.data()) {
                *v += r;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(t, Op::AddRow { x, row }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v * c).collect(),
        )
        .expect("shape preserved");
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v + c).collect(),
        )
        .expect("shape preserved");
        let rg = self.rg(x);
        self.push(t, Op::AddScalar(x), rg)
    }

    fn map(&mut self, x: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| f(*v)).collect(),
        )
        .expect("shape preserved");
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.map(x, kernels::log_sigmoid, Op::LogSigmoid(x))
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.cols() == 0 {
            return Err(TensorError::BadShape {
                op: "log_softmax",
                shape: tx.shape().to_vec(),
            });
        }
        let mut t = tx.clone();
        let c = t.cols();
        for row in t.data_mut().chunks_mut(c) {
            kernels::log_softmax_row(row);
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::LogSoftmax(x), rg))
    }

    /// Row softmax of a `[t, s]` score matrix where row `i` may only attend
    /// to columns `0..=i + (s - t)`; masked entries come out as exactly 0.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || tx.shape()[1] < tx.shape()[0] {
            return Err(TensorError::BadShape {
                op: "causal_softmax",
                shape: tx.shape().to_vec(),
            });
        }
        let (t_rows, s) = (tx.shape()[0], tx.shape()[1]);
        let mut t = tx.clone();
        for (i, row) in t.data_mut().chunks_mut(s).enumerate() {
            kernels::masked_softmax_row(row, i + 1 + (s - t_rows));
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::CausalSoftmax(x), rg))
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.cols();
        if tg.shape() != [n] || tb.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; tx.numel()];
        let mut stats = Vec::with_capacity(tx.rows());
        for (xr, or) in tx.data().chunks(n).zip(out.chunks_mut(n)) {
            stats.push(kernels::layer_norm_row(
                xr,
                tg.data(),
                tb.data(),
                LN_EPS,
                or,
            ));
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            rg,
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.numel() == 0 {
            return Err(TensorError::BadShape {
                op: "mean",
                shape: tx.shape().to_vec(),
            });
        }
        let s = tx.data().iter().sum::<f64>() / tx.numel() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Picks `x[r, idx[r]]` from `x: [rows, cols]`, giving `[rows]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        if idx.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "gather",
                lhs: tx.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut out = Vec::with_capacity(rows);
        for (r, &c) in idx.iter().enumerate() {
            if c >= cols {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather",
                    index: c,
                    size: cols,
                });
            }
            out.push(tx.data()[r * cols + c]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::vector(out),
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Selects rows (first-dimension slices) of `x` by index; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let n0 = *tx.shape().first().ok_or(TensorError::BadShape {
            op: "gather_rows",
            shape: vec![],
        })?;
        let inner = if n0 == 0 { 0 } else { tx.numel() / n0 };
        let mut out = Vec::with_capacity(idx.len() * inner);
        for &r in idx {
            if r >= n0 {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    size: n0,
                });
            }
            out.extend_from_slice(&tx.data()[r * inner..(r + 1) * inner]);
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = idx.len();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Rows `start..start + len` along the first dimension.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let n0 = tx.shape().first().copied().unwrap_or(0);
        if start + len > n0 {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                size: n0,
            });
        }
        let inner = if n0 == 0 { 0 } else { tx.numel() / n0 };
        let data = tx.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = tx.shape().to_vec();
        shape[0] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceRows { x, start }, rg))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or(TensorError::BadShape {
            op: "concat",
            shape: vec![],
        })?);
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::BadShape {
                op: "concat",
                shape: base,
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &dy, &mut grads);
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(Tensor::new(node.value.shape().to_vec(), dy)?);
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = y.shape()[1];
                if self.rg(*a) {
                    let g = accumulate(&mut grads[a.0], m * k);
                    // dA = dC · Bᵀ, or dC · B when b was stored transposed
                    kernels::gemm(m, n, k, dy, false, tb.data(), !trans_b, 1.0, g);
                }
                if self.rg(*b) {
                    let g = accumulate(&mut grads[b.0], k * n);
                    if *trans_b {
                        // b is [n, k]: dB = dCᵀ · A
                        kernels::gemm(n, m, k, dy, true, ta.data(), false, 1.0, g);
                    } else {
                        kernels::gemm(k, m, n, ta.data(), true, dy, false, 1.0, g);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if self.rg(*a) {
                    let g = accumulate(&mut grads[a.0], dy.len());
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                if self.rg(*b) {
                    let g = accumulate(&mut grads[b.0], dy.len());
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += sign * d);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let g = accumulate(&mut grads[a.0], dy.len());
                    for ((g, d), v) in g.iter_mut().zip(dy).zip(tb.data()) {
                        *g += d * v;
                    }
                }
                if self.rg(*b) {
                    let g = accumulate(&mut grads[b.0], dy.len());
                    for ((g, d), v) in g.iter_mut().zip(dy).zip(ta.data()) {
                        *g += d * v;
                    }
                }
            }
            Op::AddRow { x, row } => {
                if self.rg(*x) {
                    let g = accumulate(&mut grads[x.0], dy.len());
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                if self.rg(*row) {
                    let n = y.cols();
                    let g = accumulate(&mut grads[row.0], n);
                    for chunk in dy.chunks(n.max(1)) {
                        g.iter_mut().zip(chunk).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Scale(x, c) => {
                let g = accumulate(&mut grads[x.0], dy.len());
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d);
            }
            Op::AddScalar(x) => {
                let g = accumulate(&mut grads[x.0], dy.len());
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                let g = accumulate(&mut grads[x.0], dy.len());
                for ((g, d), v) in g.iter_mut().zip(dy).zip(tx.data()) {
                    *g += d * kernels::gelu_grad(*v);
                }
            }
            Op::LogSigmoid(x) => {
                let tx = self.value(*x);
                let g = accumulate(&mut grads[x.0], dy.len());
                for ((g, d), v) in g.iter_mut().zip(dy).zip(tx.data()) {
                    *g += d * kernels::sigmoid(-v);
                }
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                let g = accumulate(&mut grads[x.0], dy.len());
                for ((gr, dr), yr) in g.chunks_mut(c).zip(dy.chunks(c)).zip(y.data().chunks(c)) {
                    let s: f64 = dr.iter().sum();
                    for j in 0..c {
                        gr[j] += dr[j] - yr[j].exp() * s;
                    }
                }
            }
            Op::CausalSoftmax(x) => {
                let c = y.cols();
                let g = accumulate(&mut grads[x.0], dy.len());
                for ((gr, dr), pr) in g.chunks_mut(c).zip(dy.chunks(c)).zip(y.data().chunks(c)) {
                    let dot: f64 = dr.iter().zip(pr).map(|(d, p)| d * p).sum();
                    for j in 0..c {
                        gr[j] += pr[j] * (dr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let n = tx.cols();
                let nf = n as f64;
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dx = vec![0.0; dy.len()];
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for (r, &(mean, rstd)) in stats.iter().enumerate() {
                    let xr = &tx.data()[r * n..(r + 1) * n];
                    let dr = &dy[r * n..(r + 1) * n];
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for j in 0..n {
                        xhat[j] = (xr[j] - mean) * rstd;
                        dgamma[j] += dr[j] * xhat[j];
                        dbeta[j] += dr[j];
                        dxhat[j] = dr[j] * tg.data()[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xhat[j];
                    }
                    let (m1, m2) = (s1 / nf, s2 / nf);
                    for j in 0..n {
                        dx[r * n + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                for (var, d) in [(*x, dx), (*gamma, dgamma), (*beta, dbeta)] {
                    if self.rg(var) {
                        let g = accumulate(&mut grads[var.0], d.len());
                        g.iter_mut().zip(&d).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                let n = self.value(*x).numel();
                let scale = if matches!(node.op, Op::Mean(_)) {
                    dy[0] / n as f64
                } else {
                    dy[0]
                };
                let g = accumulate(&mut grads[x.0], n);
                g.iter_mut().for_each(|g| *g += scale);
            }
            Op::Gather { x, idx } => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let g = accumulate(&mut grads[x.0], tx.numel());
                for (r, (&c, d)) in idx.iter().zip(dy).enumerate() {
                    g[r * cols + c] += d;
                }
            }
            Op::GatherRows { x, idx } => {
                let tx = self.value(*x);
                let inner = if idx.is_empty() {
                    0
                } else {
                    dy.len() / idx.len()
                };
                let g = accumulate(&mut grads[x.0], tx.numel());
                for (k, &r) in idx.iter().enumerate() {
                    let dst = &mut g[r * inner..(r + 1) * inner];
                    dst.iter_mut()
                        .zip(&dy[k * inner..(k + 1) * inner])
                        .for_each(|(g, d)| *g += d);
                }
            }
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let n0 = tx.shape()[0];
                let inner = if n0 == 0 { 0 } else { tx.numel() / n0 };
                let g = accumulate(&mut grads[x.0], tx.numel());
                g[start * inner..start * inner + dy.len()]
                    .iter_mut()
                    .zip(dy)
                    .for_each(|(g, d)| *g += d);
            }
            Op::Concat { parts, axis } => {
                let shape = y.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let chunk = tp.shape()[*axis] * inner;
                    if self.rg(p) {
                        let g = accumulate(&mut grads[p.0], tp.numel());
                        for o in 0..outer {
                            let src = &dy[o * row + offset..o * row + offset + chunk];
                            g[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(g, d)| *g += d);
                        }
                    }
                    offset += chunk;
                }
            }
        }
    }
}
