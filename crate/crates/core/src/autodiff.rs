//! Reverse-mode differentiation over dense matrices and CSR-segmented
//! reductions.
//!
//! A [`Tape`] records every operation in execution order; [`Var`] is a
//! handle to one recorded value. [`Tape::backward`] walks the record in
//! exact reverse order and accumulates adjoints into every node that
//! requires a gradient. The operation set is closed: each op below carries
//! its own hand-written adjoint.
//!
//! All reductions run sequentially in a fixed order, so a forward/backward
//! pass is bit-reproducible.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{axpy_slice, dot, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    EdgePairScores {
        z: Var,
        att: Var,
        graph: &'g Graph,
    },
    SegmentSoftmax {
        logits: Var,
        graph: &'g Graph,
    },
    SegmentWeightedSum {
        weights: Var,
        values: Var,
        graph: &'g Graph,
    },
    LeakyRelu(Var, f64),
    Prelu(Var, Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Scale(Var, f64),
    Offset(Var),
    Add(Var, Var),
    Sum(Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node<'g> {
    value: Cow<'g, Matrix>,
    requires_grad: bool,
    op: Op<'g>,
}

/// Ordered record of differentiable operations.
#[derive(Debug, Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    /// Constant input borrowed for the tape's lifetime instead of copied.
    pub fn constant_ref(&mut self, value: &'g Matrix) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op<'g>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let out = mm(self.value(a), self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: sa,
                right: sb,
            });
        }
        let out = mm_nt(self.value(a), self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::MatMulNt(a, b)))
    }

    /// Per-edge attention scores `a_leftᵀ z_i + a_rightᵀ z_j` for every CSR
    /// entry `(i, j)`, where `att = [a_left ‖ a_right]` is `2F'×1` and `z` is
    /// `N×F'`. Returns an `E×1` column aligned with `graph.neighbor_ids()`.
    pub fn edge_pair_scores(&mut self, z: Var, att: Var, graph: &'g Graph) -> Result<Var> {
        let (sz, sa) = (self.shape(z), self.shape(att));
        if sz.0 != graph.num_nodes() || sa != (2 * sz.1, 1) {
            return Err(Error::Shape {
                op: "edge_pair_scores",
                left: sz,
                right: sa,
            });
        }
        let (src, dst) = node_projections(self.value(z), self.value(att));
        let mut out = Matrix::zeros(graph.num_entries(), 1);
        let vals = out.as_mut_slice();
        for i in 0..graph.num_nodes() {
            for e in graph.row_range(i) {
                vals[e] = src[i] + dst[graph.neighbor_ids()[e]];
            }
        }
        let rg = self.any_grad(&[z, att]);
        Ok(self.push(out, rg, Op::EdgePairScores { z, att, graph }))
    }

    /// Softmax within each CSR row of an `E×1` logit column.
    pub fn segment_softmax(&mut self, logits: Var, graph: &'g Graph) -> Result<Var> {
        let sl = self.shape(logits);
        if sl != (graph.num_entries(), 1) {
            return Err(Error::Shape {
                op: "segment_softmax",
                left: sl,
                right: (graph.num_entries(), 1),
            });
        }
        let x = self.value(logits).as_slice();
        let mut out = Matrix::zeros(sl.0, 1);
        let y = out.as_mut_slice();
        for i in 0..graph.num_nodes() {
            let r = graph.row_range(i);
            if r.is_empty() {
                return Err(Error::Invariant(format!(
                    "node {i} has no neighbors; softmax over an empty segment"
                )));
            }
            let max = x[r.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in r.clone() {
                let v = (x[e] - max).exp();
                y[e] = v;
                total += v;
            }
            for e in r {
                y[e] /= total;
            }
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(out, rg, Op::SegmentSoftmax { logits, graph }))
    }

    /// `out[i] = Σ_{e=(i,j)} weights[e] · values[j]`.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        values: Var,
        graph: &'g Graph,
    ) -> Result<Var> {
        let (sw, sv) = (self.shape(weights), self.shape(values));
        if sw != (graph.num_entries(), 1) || sv.0 != graph.num_nodes() {
            return Err(Error::Shape {
                op: "segment_weighted_sum",
                left: sw,
                right: sv,
            });
        }
        let w = self.value(weights).as_slice();
        let v = self.value(values);
        let mut out = Matrix::zeros(sv.0, sv.1);
        for i in 0..graph.num_nodes() {
            let dst = out.row_mut(i);
            for e in graph.row_range(i) {
                axpy_slice(dst, w[e], v.row(graph.neighbor_ids()[e]));
            }
        }
        let rg = self.any_grad(&[weights, values]);
        Ok(self.push(out, rg, Op::SegmentWeightedSum {
            weights,
            values,
            graph,
        }))
    }

    /// LeakyReLU with a fixed negative slope; derivative at 0 is 1.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = map(self.value(x), |v| if v >= 0.0 { v } else { slope * v });
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::LeakyRelu(x, slope))
    }

    /// PReLU with a learnable scalar slope (`1×1`).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let ss = self.shape(slope);
        if ss != (1, 1) {
            return Err(Error::Shape {
                op: "prelu",
                left: self.shape(x),
                right: ss,
            });
        }
        let s = self.value(slope).as_slice()[0];
        let out = map(self.value(x), |v| if v >= 0.0 { v } else { s * v });
        let rg = self.any_grad(&[x, slope]);
        Ok(self.push(out, rg, Op::Prelu(x, slope)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = map(self.value(x), sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Sigmoid(x))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).as_slice().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let out = map(self.value(x), f64::ln);
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, rg, Op::Log(x)))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = map(self.value(x), |v| v.clamp(lo, hi));
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Clamp(x, lo, hi))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = map(self.value(x), |v| c * v);
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Scale(x, c))
    }

    /// `x + c` elementwise.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let out = map(self.value(x), |v| v + c);
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Offset(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op: "add",
                left: sa,
                right: sb,
            });
        }
        let mut out = self.value(a).clone();
        out.axpy(1.0, self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    /// Sum of all entries, as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).as_slice().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Matrix::scalar(total), rg, Op::Sum(x))
    }

    /// Column means (`N×F → 1×F`).
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let m = self.value(x);
        if m.rows() == 0 {
            return Err(Error::Empty("mean_rows"));
        }
        // Summing each column in sorted order makes the result independent
        // of row order, bit for bit.
        let inv = 1.0 / m.rows() as f64;
        let mut out = Matrix::zeros(1, m.cols());
        let mut column = vec![0.0; m.rows()];
        for c in 0..m.cols() {
            for (r, v) in column.iter_mut().enumerate() {
                *v = m.get(r, c);
            }
            column.sort_unstable_by(f64::total_cmp);
            out.set(0, c, column.iter().sum::<f64>() * inv);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, rg, Op::MeanRows(x)))
    }

    /// Row `i` of the result is row `order[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, order: &[usize]) -> Result<Var> {
        let rows = self.shape(x).0;
        if let Some(bad) = order.iter().find(|&&r| r >= rows) {
            return Err(Error::Input(format!("row {bad} outside 0..{rows}")));
        }
        let out = self.value(x).gather_rows(order);
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, rg, Op::GatherRows(x, order.to_vec())))
    }

    /// Back-propagates from a `1×1` loss. Allowed once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: shape,
                right: (1, 1),
            });
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &*self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::GatherRows(x, ref order) => {
                let (r, c) = val(x).shape();
                let mut dx = Matrix::zeros(r, c);
                for (i, &src) in order.iter().enumerate() {
                    axpy_slice(dx.row_mut(src), 1.0, g.row(i));
                }
                accumulate(grads, x, dx);
            }
            Op::MatMul(a, b) => {
                if wants(a) {
                    accumulate(grads, a, mm_nt(g, val(b)));
                }
                if wants(b) {
                    accumulate(grads, b, mm_tn(val(a), g));
                }
            }
            Op::MatMulNt(a, b) => {
                if wants(a) {
                    accumulate(grads, a, mm(g, val(b)));
                }
                if wants(b) {
                    accumulate(grads, b, mm_tn(g, val(a)));
                }
            }
            Op::EdgePairScores { z, att, graph } => {
                let n = graph.num_nodes();
                let gs = g.as_slice();
                let mut d_src = vec![0.0; n];
                let mut d_dst = vec![0.0; n];
                for i in 0..n {
                    for e in graph.row_range(i) {
                        d_src[i] += gs[e];
                        d_dst[graph.neighbor_ids()[e]] += gs[e];
                    }
                }
                let zv = val(z);
                let f = zv.cols();
                let a = val(att).as_slice();
                let (a_left, a_right) = a.split_at(f);
                if wants(z) {
                    let mut dz = Matrix::zeros(n, f);
                    for i in 0..n {
                        let row = dz.row_mut(i);
                        axpy_slice(row, d_src[i], a_left);
                        axpy_slice(row, d_dst[i], a_right);
                    }
                    accumulate(grads, z, dz);
                }
                if wants(att) {
                    let mut da = Matrix::zeros(2 * f, 1);
                    let (dl, dr) = da.as_mut_slice().split_at_mut(f);
                    for i in 0..n {
                        axpy_slice(dl, d_src[i], zv.row(i));
                        axpy_slice(dr, d_dst[i], zv.row(i));
                    }
                    accumulate(grads, att, da);
                }
            }
            Op::SegmentSoftmax { logits, graph } => {
                let y = node.value.as_slice();
                let gs = g.as_slice();
                let mut dx = Matrix::zeros(y.len(), 1);
                let d = dx.as_mut_slice();
                for i in 0..graph.num_nodes() {
                    let r = graph.row_range(i);
                    let inner: f64 = r.clone().map(|e| y[e] * gs[e]).sum();
                    for e in r {
                        d[e] = y[e] * (gs[e] - inner);
                    }
                }
                accumulate(grads, logits, dx);
            }
            Op::SegmentWeightedSum {
                weights,
                values,
                graph,
            } => {
                let w = val(weights).as_slice();
                let v = val(values);
                if wants(weights) {
                    let mut dw = Matrix::zeros(w.len(), 1);
                    let d = dw.as_mut_slice();
                    for i in 0..graph.num_nodes() {
                        let gi = g.row(i);
                        for e in graph.row_range(i) {
                            d[e] = dot(gi, v.row(graph.neighbor_ids()[e]));
                        }
                    }
                    accumulate(grads, weights, dw);
                }
                if wants(values) {
                    let mut dv = Matrix::zeros(v.rows(), v.cols());
                    for i in 0..graph.num_nodes() {
                        let gi = g.row(i);
                        for e in graph.row_range(i) {
                            axpy_slice(dv.row_mut(graph.neighbor_ids()[e]), w[e], gi);
                        }
                    }
                    accumulate(grads, values, dv);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let dx = zip_map(val(x), g, |xv, gv| if xv >= 0.0 { gv } else { slope * gv });
                accumulate(grads, x, dx);
            }
            Op::Prelu(x, slope) => {
                let xv = val(x);
                let s = val(slope).as_slice()[0];
                if wants(x) {
                    accumulate(grads, x, zip_map(xv, g, |a, gv| if a >= 0.0 { gv } else { s * gv }));
                }
                if wants(slope) {
                    let ds: f64 = xv
                        .as_slice()
                        .iter()
                        .zip(g.as_slice())
                        .filter(|(a, _)| **a < 0.0)
                        .map(|(a, gv)| a * gv)
                        .sum();
                    accumulate(grads, slope, Matrix::scalar(ds));
                }
            }
            Op::Sigmoid(x) => {
                let dx = zip_map(&node.value, g, |y, gv| gv * y * (1.0 - y));
                accumulate(grads, x, dx);
            }
            Op::Log(x) => {
                let dx = zip_map(val(x), g, |xv, gv| gv / xv);
                accumulate(grads, x, dx);
            }
            Op::Clamp(x, lo, hi) => {
                let dx = zip_map(val(x), g, |xv, gv| if (lo..=hi).contains(&xv) { gv } else { 0.0 });
                accumulate(grads, x, dx);
            }
            Op::Scale(x, c) => accumulate(grads, x, map(g, |gv| c * gv)),
            Op::Offset(x) => accumulate(grads, x, g.clone()),
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(grads, a, g.clone());
                }
                if wants(b) {
                    accumulate(grads, b, g.clone());
                }
            }
            Op::Sum(x) => {
                let (r, c) = val(x).shape();
                accumulate(grads, x, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::MeanRows(x) => {
                let (r, c) = val(x).shape();
                let inv = 1.0 / r as f64;
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    for (d, gv) in dx.row_mut(i).iter_mut().zip(g.as_slice()) {
                        *d = gv * inv;
                    }
                }
                accumulate(grads, x, dx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(1.0, &delta),
        slot @ None => *slot = Some(delta),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let data = m.as_slice().iter().map(|&v| f(v)).collect();
    Matrix::from_vec(m.rows(), m.cols(), data).expect("same shape")
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Per-node `a_leftᵀ z_i` and `a_rightᵀ z_i`.
pub(crate) fn node_projections(z: &Matrix, att: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (a_left, a_right) = att.as_slice().split_at(z.cols());
    (0..z.rows())
        .map(|i| (dot(z.row(i), a_left), dot(z.row(i), a_right)))
        .unzip()
}

/// `a · b`; zero entries of `a` are skipped, which makes sparse feature
/// matrices cheap.
pub(crate) fn mm(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        let dst = out.row_mut(i);
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik != 0.0 {
                axpy_slice(dst, aik, b.row(k));
            }
        }
    }
    out
}

/// `a · bᵀ`.
pub(crate) fn mm_nt(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = dot(ai, b.row(j));
        }
    }
    out
}

/// `aᵀ · b`; zero entries of `a` are skipped.
pub(crate) fn mm_tn(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for i in 0..a.rows() {
        let bi = b.row(i);
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik != 0.0 {
                axpy_slice(out.row_mut(k), aik, bi);
            }
        }
    }
    out
}
