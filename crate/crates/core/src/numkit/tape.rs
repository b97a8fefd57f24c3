//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only tape: every op pushes a node whose inputs
//! already exist, so node order is a topological order and the backward pass
//! is a single reverse sweep. Graphs are built per forward pass and dropped
//! after the gradients are read.

use super::tensor::{
    broadcast_index_map, broadcast_shape, matmul_nt_into, matmul_tn_into, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Min(a, b) | MatMul(a, b) => {
                vec![*a, *b]
            }
            Neg(a) | Scale(a, _) | AddScalar(a) | Tanh(a) | Sigmoid(a) | Exp(a) | Ln(a)
            | Relu(a) | Abs(a) | Square(a) | Softplus(a) | Clamp(a, _, _) | Sum(a)
            | SumRows(a) | SumCols(a) | SliceCols(a, _, _) | SliceRows(a, _, _)
            | GatherRows(a, _) | Reshape(a) => vec![*a],
            ConcatCols(v) | ConcatRows(v) => v.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            ta.zip_map(tb, f)
        } else {
            let out = broadcast_shape(ta.shape(), tb.shape()).unwrap_or_else(|| {
                panic!("cannot broadcast {:?} with {:?}", ta.shape(), tb.shape())
            });
            let ma = broadcast_index_map(ta.shape(), &out);
            let mb = broadcast_index_map(tb.shape(), &out);
            let (da, db) = (ta.data(), tb.data());
            let data = ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect();
            Tensor::from_parts(out, data)
        };
        self.push(op, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise minimum of equal-shape tensors.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "min needs equal shapes");
        let v = self.value(a).zip_map(self.value(b), f64::min);
        self.push(Op::Min(a, b), v)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        self.push(op, v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `[n,k] -> [k]`, summing over rows.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (n, k) = (t.rows(), t.cols());
        let mut out = vec![0.0; k];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        self.push(Op::SumRows(a), Tensor::from_parts(vec![k], out))
    }

    /// `[n,k] -> [n,1]`, summing over columns.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.rows();
        let out = (0..n).map(|i| t.row(i).iter().sum()).collect();
        self.push(Op::SumCols(a), Tensor::from_parts(vec![n, 1], out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows(), n, "concat_cols row mismatch");
                self.value(p).cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(vec![n, total], out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let k = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut n = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), k, "concat_rows column mismatch");
            n += t.rows();
            out.extend_from_slice(t.data());
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_parts(vec![n, k], out))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        let n = t.rows();
        assert!(start < end && end <= t.cols(), "slice_cols out of range");
        let mut out = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            out.extend_from_slice(&t.row(i)[start..end]);
        }
        self.push(Op::SliceCols(a, start, end), Tensor::from_parts(vec![n, end - start], out))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        let k = t.cols();
        assert!(start < end && end <= t.rows(), "slice_rows out of range");
        let out = t.data()[start * k..end * k].to_vec();
        self.push(Op::SliceRows(a, start, end), Tensor::from_parts(vec![end - start, k], out))
    }

    /// Picks rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let t = self.value(a);
        let k = t.cols();
        let mut out = Vec::with_capacity(idx.len() * k);
        for &i in &idx {
            out.extend_from_slice(t.row(i));
        }
        let n = idx.len();
        self.push(Op::GatherRows(a, idx), Tensor::from_parts(vec![n, k], out))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).reshape(shape);
        self.push(Op::Reshape(a), v)
    }

    /// Gradients of the rank-0 node `loss` with respect to each of `wrt`.
    /// Parameters the loss does not depend on receive zero tensors.
    pub fn grad(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        if self.value(loss).rank() != 0 {
            return Err(Error::contract(format!(
                "gradient requested for non-scalar loss of shape {:?}",
                self.shape(loss)
            )));
        }
        let last = loss.0;
        let mut relevant = vec![false; last + 1];
        for w in wrt {
            if w.0 <= last {
                relevant[w.0] = self.nodes[w.0].needs_grad;
            }
        }
        for i in 0..=last {
            if relevant[i] || !self.nodes[i].needs_grad {
                continue;
            }
            relevant[i] = self.nodes[i].op.inputs().iter().any(|v| relevant[v.0]);
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; last + 1];
        grads[last] = Some(Tensor::scalar(1.0));
        for i in (0..=last).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &relevant, &mut grads);
            grads[i] = Some(g);
        }

        wrt.iter()
            .map(|w| {
                let g = grads
                    .get(w.0)
                    .and_then(Clone::clone)
                    .unwrap_or_else(|| Tensor::zeros(self.shape(*w)));
                if g.is_finite() {
                    Ok(g)
                } else {
                    Err(Error::numerical("non-finite gradient"))
                }
            })
            .collect()
    }

    fn propagate(&self, i: usize, g: &Tensor, relevant: &[bool], grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let send = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if !relevant[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, self.unbroadcast(g, *a), grads);
                send(*b, self.unbroadcast(g, *b), grads);
            }
            Op::Sub(a, b) => {
                send(*a, self.unbroadcast(g, *a), grads);
                send(*b, self.unbroadcast(&g.map(|x| -x), *b), grads);
            }
            Op::Mul(a, b) => {
                if relevant[a.0] {
                    let gb = self.elementwise_with(g, *b, |gv, bv| gv * bv);
                    send(*a, self.unbroadcast(&gb, *a), grads);
                }
                if relevant[b.0] {
                    let ga = self.elementwise_with(g, *a, |gv, av| gv * av);
                    send(*b, self.unbroadcast(&ga, *b), grads);
                }
            }
            Op::Div(a, b) => {
                if relevant[a.0] {
                    let gb = self.elementwise_with(g, *b, |gv, bv| gv / bv);
                    send(*a, self.unbroadcast(&gb, *a), grads);
                }
                if relevant[b.0] {
                    // d(a/b)/db = -(a/b)/b
                    let q = g.zip_map(out, |gv, ov| gv * ov);
                    let gb = self.elementwise_with(&q, *b, |qv, bv| -qv / bv);
                    send(*b, self.unbroadcast(&gb, *b), grads);
                }
            }
            Op::Min(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut ga = vec![0.0; g.numel()];
                let mut gb = vec![0.0; g.numel()];
                for k in 0..g.numel() {
                    if ta.data()[k] <= tb.data()[k] {
                        ga[k] = g.data()[k];
                    } else {
                        gb[k] = g.data()[k];
                    }
                }
                send(*a, Tensor::from_parts(g.shape().to_vec(), ga), grads);
                send(*b, Tensor::from_parts(g.shape().to_vec(), gb), grads);
            }
            Op::Neg(a) => send(*a, g.map(|x| -x), grads),
            Op::Scale(a, k) => send(*a, g.map(|x| x * k), grads),
            Op::AddScalar(a) => send(*a, g.clone(), grads),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if relevant[a.0] {
                    let mut ga = vec![0.0; n * k];
                    matmul_nt_into(g.data(), tb.data(), &mut ga, n, k, m);
                    send(*a, Tensor::from_parts(vec![n, k], ga), grads);
                }
                if relevant[b.0] {
                    let mut gb = vec![0.0; k * m];
                    matmul_tn_into(ta.data(), g.data(), &mut gb, n, k, m);
                    send(*b, Tensor::from_parts(vec![k, m], gb), grads);
                }
            }
            Op::Tanh(a) => send(*a, g.zip_map(out, |gv, y| gv * (1.0 - y * y)), grads),
            Op::Sigmoid(a) => send(*a, g.zip_map(out, |gv, y| gv * y * (1.0 - y)), grads),
            Op::Exp(a) => send(*a, g.zip_map(out, |gv, y| gv * y), grads),
            Op::Ln(a) => send(*a, g.zip_map(self.value(*a), |gv, x| gv / x), grads),
            Op::Relu(a) => send(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
                grads,
            ),
            Op::Abs(a) => send(
                *a,
                g.zip_map(self.value(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
                grads,
            ),
            Op::Square(a) => send(*a, g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x), grads),
            Op::Softplus(a) => send(*a, g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x)), grads),
            Op::Clamp(a, lo, hi) => send(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 }),
                grads,
            ),
            Op::Sum(a) => {
                let gv = g.item();
                send(*a, Tensor::full(self.shape(*a), gv), grads);
            }
            Op::SumRows(a) => {
                let (n, k) = (self.value(*a).rows(), self.value(*a).cols());
                let mut data = Vec::with_capacity(n * k);
                for _ in 0..n {
                    data.extend_from_slice(g.data());
                }
                send(*a, Tensor::from_parts(vec![n, k], data), grads);
            }
            Op::SumCols(a) => {
                let (n, k) = (self.value(*a).rows(), self.value(*a).cols());
                let mut data = Vec::with_capacity(n * k);
                for i in 0..n {
                    data.extend(std::iter::repeat_n(g.data()[i], k));
                }
                send(*a, Tensor::from_parts(vec![n, k], data), grads);
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if relevant[p.0] {
                        let mut data = Vec::with_capacity(n * w);
                        for r in 0..n {
                            data.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        send(p, Tensor::from_parts(vec![n, w], data), grads);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let k = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if relevant[p.0] {
                        let data = g.data()[offset * k..(offset + h) * k].to_vec();
                        send(p, Tensor::from_parts(vec![h, k], data), grads);
                    }
                    offset += h;
                }
            }
            Op::SliceCols(a, start, end) => {
                let t = self.value(*a);
                let (n, k) = (t.rows(), t.cols());
                let mut data = vec![0.0; n * k];
                for r in 0..n {
                    data[r * k + start..r * k + end].copy_from_slice(g.row(r));
                }
                send(*a, Tensor::from_parts(vec![n, k], data), grads);
            }
            Op::SliceRows(a, start, end) => {
                let t = self.value(*a);
                let (n, k) = (t.rows(), t.cols());
                let mut data = vec![0.0; n * k];
                data[start * k..end * k].copy_from_slice(g.data());
                send(*a, Tensor::from_parts(vec![n, k], data), grads);
            }
            Op::GatherRows(a, idx) => {
                let t = self.value(*a);
                let (n, k) = (t.rows(), t.cols());
                let mut data = vec![0.0; n * k];
                for (r, &i) in idx.iter().enumerate() {
                    for (d, gv) in data[i * k..(i + 1) * k].iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                send(*a, Tensor::from_parts(vec![n, k], data), grads);
            }
            Op::Reshape(a) => send(*a, g.reshape(self.shape(*a)), grads),
        }
    }

    /// `f(g, other)` elementwise over the broadcast output shape of `g`.
    fn elementwise_with(&self, g: &Tensor, other: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let t = self.value(other);
        if t.shape() == g.shape() {
            return g.zip_map(t, f);
        }
        let map = broadcast_index_map(t.shape(), g.shape());
        let data = g.data().iter().zip(&map).map(|(&gv, &j)| f(gv, t.data()[j])).collect();
        Tensor::from_parts(g.shape().to_vec(), data)
    }

    /// Sums `g` down to the shape of `target` (reverse of broadcasting).
    fn unbroadcast(&self, g: &Tensor, target: Var) -> Tensor {
        let shape = self.shape(target);
        if shape == g.shape() {
            return g.clone();
        }
        let map = broadcast_index_map(shape, g.shape());
        let mut data = vec![0.0; shape.iter().product()];
        for (&gv, &j) in g.data().iter().zip(&map) {
            data[j] += gv;
        }
        Tensor::from_parts(shape.to_vec(), data)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}
