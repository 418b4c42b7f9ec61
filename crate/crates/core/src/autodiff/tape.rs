//! Wengert-list reverse-mode differentiation.
//!
//! Every forward op appends a node holding its output value. `backward`
//! walks the list in reverse, so insertion order is the topological order.

use super::tensor::{
    broadcast_data, broadcast_offsets, broadcast_shape, gemm, numel, permute_data, split_axis, Tensor, TensorError,
};

/// Floor applied to the argument of `log`.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    BroadcastTo(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>, usize),
    Gather(Var, Vec<usize>, usize),
    Softmax(Var, usize),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Recorded computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<(), TensorError> {
    if axis >= rank {
        Err(TensorError::Axis { op, axis, rank })
    } else {
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient populated by the last `backward` call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (da, db) = (self.data(a), self.data(b));
        let data: Vec<f64> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let oa = broadcast_offsets(&sa, &out_shape);
            let ob = broadcast_offsets(&sb, &out_shape);
            oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if broadcast_shape(&sx, shape).as_deref() != Some(shape) {
            return Err(TensorError::Shape {
                op: "broadcast_to",
                lhs: sx,
                rhs: shape.to_vec(),
            });
        }
        let data = broadcast_data(self.data(x), &sx, shape);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::BroadcastTo(x), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// Natural log with its argument floored at [`LOG_EPS`].
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.max(LOG_EPS).ln())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `x · w + b` over the last axis of `x`; `w` is in×out, `b` has length out.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let k = *sx.last().unwrap_or(&0);
        if sx.is_empty() || sw.len() != 2 || sw[0] != k || sb != [sw[1]] {
            return Err(TensorError::Shape {
                op: "affine",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let n = sw[1];
        let m = numel(sx) / k.max(1);
        let mut out_shape = sx.to_vec();
        *out_shape.last_mut().unwrap() = n;
        let bias = self.data(b);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm(m, k, n, self.data(x), false, self.data(w), false, &mut out, true);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Affine(x, w, b), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.shape(inputs[0]).to_vec();
        check_axis("concat", axis, first.len())?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(inputs.to_vec(), axis), rg))
    }

    /// Selects slices `indices` along `axis`.
    pub fn gather(&mut self, x: Var, indices: &[usize], axis: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        check_axis("gather", axis, sx.len())?;
        let (outer, len, inner) = split_axis(&sx, axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(TensorError::Index {
                op: "gather",
                index: bad,
                len,
            });
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * len + i) * inner;
                out.extend_from_slice(&src[start..start + inner]);
            }
        }
        let mut shape = sx;
        shape[axis] = indices.len();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Gather(x, indices.to_vec(), axis), rg))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        check_axis("softmax", axis, sx.len())?;
        let (outer, len, inner) = split_axis(&sx, axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(sx, out)?, Op::Softmax(x, axis), rg))
    }

    fn reduce_axis(&mut self, name: &'static str, x: Var, axis: usize, mean: bool) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        check_axis(name, axis, sx.len())?;
        let (outer, len, inner) = split_axis(&sx, axis);
        let src = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean {
            let scale = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let mut shape = sx;
        shape.remove(axis);
        let op = if mean { Op::Mean(x, axis) } else { Op::Sum(x, axis) };
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce_axis("sum", x, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce_axis("mean", x, axis, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        let valid = axes.len() == sx.len()
            && axes.iter().all(|&a| a < sx.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::Shape {
                op: "permute",
                lhs: sx,
                rhs: axes.to_vec(),
            });
        }
        let (data, shape) = permute_data(self.data(x), &sx, axes);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Permute(x, axes.to_vec()), rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let out = self.value(x).narrow(axis, start, len)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Narrow(x, axis, start), rg))
    }

    /// Reverse pass from a single-element `loss`. Every node with
    /// `requires_grad` gets a gradient; nodes the loss does not reach get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let loss_shape = self.shape(loss);
        if numel(loss_shape) != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = if node.requires_grad {
                let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(Tensor::new(node.value.shape().to_vec(), data).expect("grad shape"))
            } else {
                None
            };
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.reduce_into(*a, out_shape, g, 1.0, grads);
                self.reduce_into(*b, out_shape, g, sign, grads);
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (da, db) = (self.data(*a), self.data(*b));
                let same = sa == sb;
                let oa = if same { None } else { Some(broadcast_offsets(sa, out_shape)) };
                let ob = if same { None } else { Some(broadcast_offsets(sb, out_shape)) };
                let off_a = |k: usize| oa.as_ref().map_or(k, |o| o[k]);
                let off_b = |k: usize| ob.as_ref().map_or(k, |o| o[k]);
                if self.rg(*a) {
                    let ga = accumulate(grads, *a, da.len());
                    for (k, &gk) in g.iter().enumerate() {
                        ga[off_a(k)] += gk * db[off_b(k)];
                    }
                }
                if self.rg(*b) {
                    let gb = accumulate(grads, *b, db.len());
                    for (k, &gk) in g.iter().enumerate() {
                        gb[off_b(k)] += gk * da[off_a(k)];
                    }
                }
            }
            Op::BroadcastTo(x) => self.reduce_into(*x, out_shape, g, 1.0, grads),
            Op::Scale(x, c) => self.elementwise(*x, grads, |k| g[k] * c),
            Op::AddScalar(x) => self.elementwise(*x, grads, |k| g[k]),
            Op::Exp(x) => self.elementwise(*x, grads, |k| g[k] * y[k]),
            Op::Log(x) => {
                let xd = self.data(*x);
                self.elementwise(*x, grads, |k| if xd[k] > LOG_EPS { g[k] / xd[k] } else { 0.0 })
            }
            Op::Abs(x) => {
                let xd = self.data(*x);
                self.elementwise(*x, grads, |k| {
                    if xd[k] > 0.0 {
                        g[k]
                    } else if xd[k] < 0.0 {
                        -g[k]
                    } else {
                        0.0
                    }
                })
            }
            Op::Square(x) => {
                let xd = self.data(*x);
                self.elementwise(*x, grads, |k| 2.0 * xd[k] * g[k])
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                self.elementwise(*x, grads, |k| if xd[k] > 0.0 { g[k] } else { 0.0 })
            }
            Op::Clamp(x, lo, hi) => {
                let xd = self.data(*x);
                self.elementwise(*x, grads, |k| if xd[k] >= *lo && xd[k] <= *hi { g[k] } else { 0.0 })
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    let bd = self.data(*b);
                    let ga = accumulate(grads, *a, m * k);
                    gemm(m, n, k, g, false, bd, true, ga, true);
                }
                if self.rg(*b) {
                    let ad = self.data(*a);
                    let gb = accumulate(grads, *b, k * n);
                    gemm(k, m, n, ad, true, g, false, gb, true);
                }
            }
            Op::Affine(x, w, b) => {
                let sw = self.shape(*w);
                let (k, n) = (sw[0], sw[1]);
                let m = g.len() / n.max(1);
                if self.rg(*x) {
                    let wd = self.data(*w);
                    let gx = accumulate(grads, *x, m * k);
                    gemm(m, n, k, g, false, wd, true, gx, true);
                }
                if self.rg(*w) {
                    let xd = self.data(*x);
                    let gw = accumulate(grads, *w, k * n);
                    gemm(k, m, n, xd, true, g, false, gw, true);
                }
                if self.rg(*b) {
                    let gb = accumulate(grads, *b, n);
                    for row in g.chunks_exact(n) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Concat(inputs, axis) => {
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if self.rg(v) {
                        let gv = accumulate(grads, v, outer * len * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (acc, &s) in gv[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *acc += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Gather(x, indices, axis) => {
                let sx = self.shape(*x);
                let (outer, len, inner) = split_axis(sx, *axis);
                let gx = accumulate(grads, *x, outer * len * inner);
                let n_idx = indices.len();
                for o in 0..outer {
                    for (j, &src_row) in indices.iter().enumerate() {
                        let from = &g[(o * n_idx + j) * inner..(o * n_idx + j + 1) * inner];
                        let to = &mut gx[(o * len + src_row) * inner..(o * len + src_row + 1) * inner];
                        for (acc, &v) in to.iter_mut().zip(from) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = split_axis(out_shape, *axis);
                let gx = accumulate(grads, *x, y.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let sx = self.shape(*x);
                let (outer, len, inner) = split_axis(sx, *axis);
                let scale = if matches!(node.op, Op::Mean(..)) { 1.0 / len as f64 } else { 1.0 };
                let gx = accumulate(grads, *x, outer * len * inner);
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..len {
                        let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                        for (acc, &v) in dst.iter_mut().zip(src) {
                            *acc += v * scale;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let g0 = g[0];
                self.elementwise(*x, grads, |_| g0)
            }
            Op::MeanAll(x) => {
                let g0 = g[0] / self.value(*x).numel() as f64;
                self.elementwise(*x, grads, |_| g0)
            }
            Op::Reshape(x) => self.elementwise(*x, grads, |k| g[k]),
            Op::Permute(x, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (back, _) = permute_data(g, out_shape, &inverse);
                self.elementwise(*x, grads, |k| back[k])
            }
            Op::Narrow(x, axis, start) => {
                let sx = self.shape(*x);
                let (outer, full, inner) = split_axis(sx, *axis);
                let len = out_shape[*axis];
                let gx = accumulate(grads, *x, outer * full * inner);
                for o in 0..outer {
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    let base = (o * full + start) * inner;
                    for (acc, &v) in gx[base..base + len * inner].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
        }
    }

    fn elementwise(&self, x: Var, grads: &mut [Option<Vec<f64>>], f: impl Fn(usize) -> f64) {
        if !self.rg(x) {
            return;
        }
        let gx = accumulate(grads, x, self.value(x).numel());
        for (k, acc) in gx.iter_mut().enumerate() {
            *acc += f(k);
        }
    }

    /// Accumulates `sign * g` (shaped like `out_shape`) into `x`, summing
    /// over broadcast axes.
    fn reduce_into(&self, x: Var, out_shape: &[usize], g: &[f64], sign: f64, grads: &mut [Option<Vec<f64>>]) {
        if !self.rg(x) {
            return;
        }
        let sx = self.shape(x);
        let gx = accumulate(grads, x, numel(sx));
        if sx == out_shape {
            for (acc, &v) in gx.iter_mut().zip(g) {
                *acc += sign * v;
            }
        } else {
            for (k, off) in broadcast_offsets(sx, out_shape).into_iter().enumerate() {
                gx[off] += sign * g[k];
            }
        }
    }
}
