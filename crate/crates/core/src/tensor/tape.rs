//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Operations are appended to a [`Tape`] in execution order and addressed by
//! [`Var`] handles. `backward` walks the records in exact reverse insertion
//! order. Gradients accumulate (`+=`) across calls until `zero_grad`.

use std::sync::Arc;

use rand::Rng;

use super::kernels::{self, Parallelism};
use super::Matrix;
use crate::error::{Error, Result};
use crate::graph::SparseOperator;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Relu,
    Scale(f64),
    /// `alpha * x + beta`
    Affine(f64, f64),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Unary(Unary, Var),
    Concat(Var, Var),
    RowMean(Var),
    Sum(Var),
    Dropout(Var, Vec<f64>),
    SoftmaxCrossEntropy {
        logits: Var,
        mask: Vec<usize>,
        labels: Vec<usize>,
        probs: Matrix,
    },
    Spmm(Arc<SparseOperator>, Var),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    ScaleRows(Var, Arc<[f64]>),
}

struct Node {
    value: Arc<Matrix>,
    op: Op,
    requires_grad: bool,
    grad: Option<Matrix>,
}

/// Ordered record of operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    par: Parallelism,
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_parallelism(par: Parallelism) -> Self {
        Self {
            nodes: Vec::new(),
            par,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant leaf sharing an existing allocation.
    pub fn constant_shared(&mut self, value: &Arc<Matrix>) -> Var {
        self.nodes.push(Node {
            value: Arc::clone(value),
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never accumulates gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient, `None` until a backward pass reaches `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va, vb));
        }
        let out = kernels::matmul(va, vb, self.par);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Element-wise binary op; `b` may also be a `1 × cols` row broadcast over the rows of `a`.
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let broadcast = if va.shape() == vb.shape() {
            false
        } else if vb.rows() == 1 && vb.cols() == va.cols() {
            true
        } else {
            return Err(shape_err("elementwise", va, vb));
        };
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let cols = va.cols();
        let bs = vb.as_slice();
        let data = va
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if broadcast { bs[i % cols] } else { bs[i] };
                f(x, y)
            })
            .collect();
        let out = Matrix::from_vec(va.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary { kind, a, b, broadcast }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let va = self.value(a);
        let out = match kind {
            Unary::Sigmoid => va.map(sigmoid),
            Unary::Relu => va.map(|x| if x > 0.0 { x } else { 0.0 }),
            Unary::Scale(alpha) => va.map(|x| alpha * x),
            Unary::Affine(alpha, beta) => va.map(|x| alpha * x + beta),
        };
        let rg = self.rg(a);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(Unary::Scale(alpha), a)
    }

    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        self.unary(Unary::Affine(alpha, beta), a)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(shape_err("concat_cols", va, vb));
        }
        let out = Matrix::hstack(&[va.clone(), vb.clone()])?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    /// Column-wise mean, `m × n → 1 × n`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(Error::Empty("row_mean"));
        }
        let mut out = vec![0.0; va.cols()];
        for r in 0..va.rows() {
            for (o, x) in out.iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        let m = va.rows() as f64;
        out.iter_mut().for_each(|o| *o /= m);
        let rg = self.rg(a);
        Ok(self.push(Matrix::row_vector(&out), Op::RowMean(a), rg))
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), rg)
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)` so evaluation
    /// is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let va = self.value(a);
        let keep = 1.0 / (1.0 - p);
        // Zeros of a constant input stay zero under any mask and need no
        // gradient, so they consume no draws.
        let skip_zeros = !self.rg(a);
        let mask: Vec<f64> = va
            .as_slice()
            .iter()
            .map(|&x| {
                if skip_zeros && x == 0.0 {
                    keep
                } else if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = va.as_slice().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout(a, mask), rg))
    }

    /// Mean negative log-softmax over the rows listed in `mask`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<Var> {
        let v = self.value(logits);
        let (m, c) = v.shape();
        if mask.is_empty() {
            return Err(Error::Empty("softmax_cross_entropy mask"));
        }
        if labels.len() != m {
            return Err(Error::Shape {
                op: "softmax_cross_entropy labels",
                left: v.shape(),
                right: (labels.len(), 1),
            });
        }
        let mut probs = Matrix::zeros(m, c);
        let mut loss = 0.0;
        for &i in mask {
            if i >= m {
                return Err(Error::Config(format!("mask index {i} >= {m} rows")));
            }
            let y = labels[i];
            if y >= c {
                return Err(Error::Config(format!("label {y} out of range for {c} classes")));
            }
            let row = v.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = z.ln() + max;
            loss += log_z - row[y];
            for (p, x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
        }
        loss /= mask.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxCrossEntropy {
                logits,
                mask: mask.to_vec(),
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn spmm(&mut self, op: &Arc<SparseOperator>, h: Var) -> Result<Var> {
        let vh = self.value(h);
        if op.n() != vh.rows() {
            return Err(Error::Shape {
                op: "spmm",
                left: (op.n(), op.n()),
                right: vh.shape(),
            });
        }
        let out = kernels::spmm(op, vh, self.par);
        let rg = self.rg(h);
        Ok(self.push(out, Op::Spmm(Arc::clone(op), h), rg))
    }

    /// Row gather: output row `r` is input row `index[r]`.
    pub fn gather_rows(&mut self, a: Var, index: &Arc<[usize]>) -> Result<Var> {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            if i >= va.rows() {
                return Err(Error::Config(format!("gather index {i} >= {} rows", va.rows())));
            }
            data.extend_from_slice(va.row(i));
        }
        let out = Matrix::from_vec(index.len(), cols, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Gather(a, Arc::clone(index)), rg))
    }

    /// Sums contiguous row segments `[offsets[i], offsets[i+1])` into row `i`.
    pub fn segment_sum(&mut self, a: Var, offsets: &Arc<[usize]>) -> Result<Var> {
        let va = self.value(a);
        let segs = offsets.len().saturating_sub(1);
        if offsets.last().copied().unwrap_or(0) != va.rows() {
            return Err(Error::Shape {
                op: "segment_sum",
                left: va.shape(),
                right: (offsets.last().copied().unwrap_or(0), va.cols()),
            });
        }
        let mut out = Matrix::zeros(segs, va.cols());
        for i in 0..segs {
            let row = out.row_mut(i);
            for e in offsets[i]..offsets[i + 1] {
                for (o, x) in row.iter_mut().zip(va.row(e)) {
                    *o += x;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentSum(a, Arc::clone(offsets)), rg))
    }

    /// Multiplies row `r` by the constant `weights[r]`.
    pub fn scale_rows(&mut self, a: Var, weights: &Arc<[f64]>) -> Result<Var> {
        let va = self.value(a);
        if weights.len() != va.rows() {
            return Err(Error::Shape {
                op: "scale_rows",
                left: va.shape(),
                right: (weights.len(), 1),
            });
        }
        let mut out = va.clone();
        for (r, &w) in weights.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|x| *x *= w);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::ScaleRows(a, Arc::clone(weights)), rg))
    }

    /// Reverse pass from a `1 × 1` value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            match &mut self.nodes[idx].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let par = self.par;
        let mut send = |v: Var, contrib: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, kernels::matmul_nt(g, vb, par));
                }
                if self.rg(*b) {
                    send(*b, kernels::matmul_tn(va, g, par));
                }
            }
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let cols = va.cols();
                let bs = vb.as_slice();
                let bval = |i: usize| if *broadcast { bs[i % cols] } else { bs[i] };
                if self.rg(*a) {
                    let ga = match kind {
                        Binary::Add | Binary::Sub => g.clone(),
                        Binary::Mul => {
                            let d = g.as_slice().iter().enumerate().map(|(i, x)| x * bval(i));
                            Matrix::from_vec(g.rows(), cols, d.collect()).expect("shape")
                        }
                    };
                    send(*a, ga);
                }
                if self.rg(*b) {
                    let sign = if *kind == Binary::Sub { -1.0 } else { 1.0 };
                    let per: Vec<f64> = match kind {
                        Binary::Add | Binary::Sub => g.as_slice().iter().map(|x| sign * x).collect(),
                        Binary::Mul => g
                            .as_slice()
                            .iter()
                            .zip(va.as_slice())
                            .map(|(x, y)| x * y)
                            .collect(),
                    };
                    let gb = if *broadcast {
                        let mut acc = vec![0.0; cols];
                        for row in per.chunks(cols.max(1)) {
                            for (o, x) in acc.iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                        Matrix::row_vector(&acc)
                    } else {
                        Matrix::from_vec(g.rows(), cols, per).expect("shape")
                    };
                    send(*b, gb);
                }
            }
            Op::Unary(kind, a) => {
                let out = &node.value;
                let va = self.value(*a);
                let d: Vec<f64> = match kind {
                    Unary::Sigmoid => g
                        .as_slice()
                        .iter()
                        .zip(out.as_slice())
                        .map(|(x, s)| x * s * (1.0 - s))
                        .collect(),
                    Unary::Relu => g
                        .as_slice()
                        .iter()
                        .zip(va.as_slice())
                        .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 })
                        .collect(),
                    Unary::Scale(alpha) | Unary::Affine(alpha, _) => {
                        g.as_slice().iter().map(|x| alpha * x).collect()
                    }
                };
                send(*a, Matrix::from_vec(g.rows(), g.cols(), d).expect("shape"));
            }
            Op::Concat(a, b) => {
                let p = self.value(*a).cols();
                send(*a, g.columns(0, p));
                send(*b, g.columns(p, g.cols()));
            }
            Op::RowMean(a) => {
                let m = self.value(*a).rows();
                let scaled: Vec<f64> = g.as_slice().iter().map(|x| x / m as f64).collect();
                let mut d = Matrix::zeros(m, g.cols());
                for r in 0..m {
                    d.row_mut(r).copy_from_slice(&scaled);
                }
                send(*a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                send(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Dropout(a, mask) => {
                let d = g.as_slice().iter().zip(mask).map(|(x, m)| x * m).collect();
                send(*a, Matrix::from_vec(g.rows(), g.cols(), d).expect("shape"));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                mask,
                labels,
                probs,
            } => {
                let scale = g.get(0, 0) / mask.len() as f64;
                let mut d = Matrix::zeros(probs.rows(), probs.cols());
                for &i in mask {
                    let row = d.row_mut(i);
                    for (o, p) in row.iter_mut().zip(probs.row(i)) {
                        *o += scale * p;
                    }
                    row[labels[i]] -= scale;
                }
                send(*logits, d);
            }
            Op::Spmm(op, h) => {
                send(*h, kernels::spmm(op.transposed(), g, par));
            }
            Op::Gather(a, index) => {
                let mut d = Matrix::zeros(self.value(*a).rows(), g.cols());
                for (r, &i) in index.iter().enumerate() {
                    for (o, x) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                send(*a, d);
            }
            Op::SegmentSum(a, offsets) => {
                let mut d = Matrix::zeros(self.value(*a).rows(), g.cols());
                for i in 0..offsets.len() - 1 {
                    for e in offsets[i]..offsets[i + 1] {
                        d.row_mut(e).copy_from_slice(g.row(i));
                    }
                }
                send(*a, d);
            }
            Op::ScaleRows(a, weights) => {
                let mut d = g.clone();
                for (r, &w) in weights.iter().enumerate() {
                    d.row_mut(r).iter_mut().for_each(|x| *x *= w);
                }
                send(*a, d);
            }
        }
    }
}
