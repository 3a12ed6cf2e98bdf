//! Tape-based reverse-mode differentiation over rank-2 arrays.
//!
//! Nodes are appended in creation order, which is a topological order, so
//! the backward pass is a single reverse sweep over the tape.

use std::collections::HashMap;
use std::rc::Rc;

use super::{ParamId, ParamRegistry, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    SelectCols(Var, Rc<[usize]>),
    GatherRows(Var, Rc<[usize]>),
    Cos(Var),
    Sin(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SegmentSoftmax(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    LogSoftmaxRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A computation graph. Confined to one thread for its lifetime.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn check_offsets(op: &'static str, rows: usize, offsets: &[usize]) -> Result<()> {
    let ok = offsets.first() == Some(&0) && offsets.last() == Some(&rows) && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: (rows, 1),
            rhs: (offsets.len(), 1),
        })
    }
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
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

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a registry parameter. Repeated calls return the same node.
    pub fn param(&mut self, registry: &ParamRegistry, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let requires_grad = !registry.is_frozen(id);
        let v = self.push(registry.value(id).clone(), Op::Param(id), requires_grad);
        self.param_leaves.insert(id, v);
        v
    }

    fn binary_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, mk(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("div", a, b, |x, y| x / y, Op::Div)
    }

    fn row_broadcast(
        &mut self,
        op: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err(op, ta, tr));
        }
        let cols = ta.cols();
        let r = tr.data();
        let data = ta.data().iter().enumerate().map(|(i, &x)| f(x, r[i % cols])).collect();
        let out = Tensor::new(ta.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, mk(a, row), rg))
    }

    /// `a + 1·row` for `a: n×d`, `row: 1×d`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, |x, y| x + y, Op::AddRow)
    }

    /// Multiply every row of `a` elementwise by `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, |x, y| x * y, Op::MulRow)
    }

    /// Multiply row `i` of `a: n×d` by the scalar `col[i]` of `col: n×1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(shape_err("mul_col", ta, tc));
        }
        let cols = ta.cols();
        let c = tc.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * c[i / cols.max(1)])
            .collect();
        let out = Tensor::new(ta.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = ta.matmul(tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Horizontal concatenation; all parts share a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Shape {
            op: "concat",
            lhs: (0, 0),
            rhs: (0, 0),
        })?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(shape_err("concat", self.value(*first), self.value(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Column gather: `out[:, j] = a[:, idx[j]]`.
    pub fn select_cols(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&c| c >= ta.cols()) {
            return Err(Error::Shape {
                op: "select_cols",
                lhs: ta.shape(),
                rhs: (1, bad),
            });
        }
        let out = Tensor::from_fn(ta.rows(), idx.len(), |r, c| ta.get(r, idx[c]));
        let rg = self.rg(a);
        Ok(self.push(out, Op::SelectCols(a, idx), rg))
    }

    /// Row gather: `out[i] = a[idx[i]]`.
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&r| r >= ta.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: ta.shape(),
                rhs: (bad, 1),
            });
        }
        let cols = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &r in idx.iter() {
            data.extend_from_slice(ta.row(r));
        }
        let out = Tensor::new(idx.len(), cols, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Row sums, `n×d → n×1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::new(t.rows(), 1, data).expect("row count");
        let rg = self.rg(a);
        self.push(out, Op::SumRows(a), rg)
    }

    /// Softmax of an `m×1` column within each segment `offsets[g]..offsets[g+1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: t.shape(),
                rhs: (t.rows(), 1),
            });
        }
        check_offsets("segment_softmax", t.rows(), &offsets)?;
        let x = t.data();
        let mut out = vec![0.0; x.len()];
        for w in offsets.windows(2) {
            let seg = &x[w[0]..w[1]];
            if seg.is_empty() {
                continue;
            }
            let m = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in out[w[0]..w[1]].iter_mut().zip(seg) {
                *o = (v - m).exp();
                z += *o;
            }
            out[w[0]..w[1]].iter_mut().for_each(|o| *o /= z);
        }
        let out = Tensor::new(x.len(), 1, out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentSoftmax(a, offsets), rg))
    }

    /// Sum the rows of each segment, `m×d → g×d`.
    pub fn segment_sum(&mut self, a: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        check_offsets("segment_sum", t.rows(), &offsets)?;
        let cols = t.cols();
        let groups = offsets.len() - 1;
        let mut out = Tensor::zeros(groups, cols);
        for g in 0..groups {
            let dst = out.row_mut(g);
            for r in offsets[g]..offsets[g + 1] {
                for (d, s) in dst.iter_mut().zip(t.row(r)) {
                    *d += s;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentSum(a, offsets), rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows() {
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            out.row_mut(r).iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Row-wise dot products of two `n×d` arrays, giving `n×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum_rows(p))
    }

    /// Row-wise cosine similarity of two `n×d` arrays, giving `n×1`.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let dot = self.row_dot(a, b)?;
        let aa = self.row_dot(a, a)?;
        let bb = self.row_dot(b, b)?;
        if self
            .value(aa)
            .data()
            .iter()
            .chain(self.value(bb).data())
            .any(|&v| v == 0.0)
        {
            return Err(Error::ZeroNorm("cosine_sim"));
        }
        let na = self.sqrt(aa);
        let nb = self.sqrt(bb);
        let denom = self.mul(na, nb)?;
        self.div(dot, denom)
    }

    /// Cosine similarity of two row vectors, as a `1×1` node.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != 1 || ta.shape() != tb.shape() {
            return Err(shape_err("cosine_sim", ta, tb));
        }
        self.row_cosine(a, b)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into `registry`.
    ///
    /// Gradients add onto whatever the registry already holds; frozen
    /// parameters are never written.
    pub fn backward(&self, loss: Var, registry: &mut ParamRegistry) -> Result<()> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(Error::NotScalar {
                op: "backward",
                shape: lt.shape(),
            });
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads, registry);
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>], registry: &mut ParamRegistry) {
        let val = |v: Var| &self.nodes[v.0].value;
        let zip = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = a.data().iter().zip(g.data()).map(|(&x, &gy)| f(x, gy)).collect();
            Tensor::new(a.rows(), a.cols(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => registry.accumulate_grad(*id, g),
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, zip(val(*b), &|y, gy| y * gy));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, zip(val(*a), &|x, gy| x * gy));
                }
            }
            Op::Div(a, b) => {
                let tb = val(*b);
                if self.rg(*a) {
                    self.acc(grads, *a, zip(tb, &|y, gy| gy / y));
                }
                if self.rg(*b) {
                    let ta = val(*a);
                    let data = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .zip(g.data())
                        .map(|((&x, &y), &gy)| -gy * x / (y * y))
                        .collect();
                    self.acc(grads, *b, Tensor::new(tb.rows(), tb.cols(), data).unwrap());
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.rg(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, s) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    self.acc(grads, *row, gr);
                }
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(*a), val(*row));
                let cols = g.cols();
                if self.rg(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gy)| gy * tr.data()[i % cols])
                        .collect();
                    self.acc(grads, *a, Tensor::new(g.rows(), cols, data).unwrap());
                }
                if self.rg(*row) {
                    let mut gr = Tensor::zeros(1, cols);
                    for r in 0..g.rows() {
                        let (gy, x) = (g.row(r), ta.row(r));
                        for c in 0..cols {
                            gr.data_mut()[c] += gy[c] * x[c];
                        }
                    }
                    self.acc(grads, *row, gr);
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (val(*a), val(*col));
                let cols = g.cols();
                if self.rg(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gy)| gy * tc.data()[i / cols.max(1)])
                        .collect();
                    self.acc(grads, *a, Tensor::new(g.rows(), cols, data).unwrap());
                }
                if self.rg(*col) {
                    let data = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(ta.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.acc(grads, *col, Tensor::new(g.rows(), 1, data).unwrap());
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.matmul_t(val(*b)));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, val(*a).t_matmul(g));
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if self.rg(*p) {
                        let gp = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, start + c));
                        self.acc(grads, *p, gp);
                    }
                    start += w;
                }
            }
            Op::SelectCols(a, idx) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..g.rows() {
                    let (src, dst) = (g.row(r).to_vec(), ga.row_mut(r));
                    for (j, &c) in idx.iter().enumerate() {
                        dst[c] += src[j];
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for (i, &r) in idx.iter().enumerate() {
                    for (d, s) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                        *d += s;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Cos(a) => self.acc(grads, *a, zip(val(*a), &|x, gy| -x.sin() * gy)),
            Op::Sin(a) => self.acc(grads, *a, zip(val(*a), &|x, gy| x.cos() * gy)),
            Op::Exp(a) => self.acc(grads, *a, zip(&node.value, &|y, gy| y * gy)),
            Op::Log(a) => self.acc(grads, *a, zip(val(*a), &|x, gy| gy / x)),
            Op::Tanh(a) => self.acc(grads, *a, zip(&node.value, &|y, gy| (1.0 - y * y) * gy)),
            Op::Sigmoid(a) => self.acc(grads, *a, zip(&node.value, &|y, gy| y * (1.0 - y) * gy)),
            Op::Sqrt(a) => self.acc(grads, *a, zip(&node.value, &|y, gy| gy / (2.0 * y))),
            Op::Sum(a) => {
                let t = val(*a);
                self.acc(grads, *a, Tensor::filled(t.rows(), t.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let s = g.data()[0] / t.len() as f64;
                self.acc(grads, *a, Tensor::filled(t.rows(), t.cols(), s));
            }
            Op::SumRows(a) => {
                let t = val(*a);
                self.acc(grads, *a, Tensor::from_fn(t.rows(), t.cols(), |r, _| g.get(r, 0)));
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = node.value.data();
                let gy = g.data();
                let mut gx = vec![0.0; y.len()];
                for w in offsets.windows(2) {
                    let dot: f64 = (w[0]..w[1]).map(|i| gy[i] * y[i]).sum();
                    for i in w[0]..w[1] {
                        gx[i] = y[i] * (gy[i] - dot);
                    }
                }
                self.acc(grads, *a, Tensor::new(y.len(), 1, gx).unwrap());
            }
            Op::SegmentSum(a, offsets) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for (grp, w) in offsets.windows(2).enumerate() {
                    for r in w[0]..w[1] {
                        ga.row_mut(r).copy_from_slice(g.row(grp));
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = g.clone();
                for r in 0..g.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    let yr = y.row(r).to_vec();
                    for (d, yv) in ga.row_mut(r).iter_mut().zip(yr) {
                        *d -= yv.exp() * gsum;
                    }
                }
                self.acc(grads, *a, ga);
            }
        }
    }
}
