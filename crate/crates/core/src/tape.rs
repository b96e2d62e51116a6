//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A `Tape` records every forward operation together with its backward rule;
//! `backward` walks the record in exact reverse order and accumulates
//! gradients additively across fan-out. The tape is rebuilt each optimizer
//! step (define-by-run): the set of surviving hyperedge entries changes with
//! the learned thresholds, so a static graph would be unsound.
//!
//! Conventions:
//! - ReLU uses subgradient 0 at the kink.
//! - `rsqrt` and `recip` are epsilon-guarded (`x + 1e-12`) so weighted
//!   degrees approaching zero keep the backward pass finite.
//! - `logsumexp` is max-shifted; no forward op produces non-finite values on
//!   valid inputs (debug builds check every output).

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::sparse::SymOp;

pub const EPSILON_GUARD: f64 = 1e-12;

/// Node handle on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A recorded value: forward data, optional gradient accumulator, and the
/// backward rule that produced it.
#[derive(Debug)]
pub struct Tensor {
    pub value: Mat,
    pub grad: Option<Mat>,
    pub requires_grad: bool,
    op: Op,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    ScalarMul(Var, f64),
    Mul(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Rsqrt(Var),
    Recip(Var),
    RowSums(Var),
    ColSums(Var),
    Sum(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    HStack(Var, Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    AddRowVec(Var, Var),
    SubColVec(Var, Var),
    LogSumExpRows(Var),
    RowL2Norm(Var),
    Transpose(Var),
    Reshape(Var),
    SymApply(Var, Rc<dyn SymOp>),
    Dropout(Var, Rc<Mat>),
    RowFallback {
        thresholded: Var,
        scores: Var,
        rows: Rc<Vec<usize>>,
    },
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0]
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, false, Op::Leaf)
    }

    fn push(&mut self, value: Mat, requires_grad: bool, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite forward value from {op:?}");
        self.nodes.push(Tensor {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.needs(a);
        self.push(value, rg, Op::ScalarMul(a, c))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(stable_sigmoid);
        let rg = self.needs(a);
        self.push(value, rg, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.needs(a);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.needs(a);
        self.push(value, rg, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.needs(a);
        self.push(value, rg, Op::Log(a))
    }

    /// `(x + eps)^{-1/2}` with `eps = 1e-12`.
    pub fn rsqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (x + EPSILON_GUARD).sqrt());
        let rg = self.needs(a);
        self.push(value, rg, Op::Rsqrt(a))
    }

    /// `(x + eps)^{-1}` with `eps = 1e-12`.
    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (x + EPSILON_GUARD));
        let rg = self.needs(a);
        self.push(value, rg, Op::Recip(a))
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Mat::from_vec(m.rows(), 1, (0..m.rows()).map(|i| m.row(i).iter().sum()).collect());
        let rg = self.needs(a);
        self.push(value, rg, Op::RowSums(a))
    }

    pub fn col_sums(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for (o, &v) in out.iter_mut().zip(m.row(i)) {
                *o += v;
            }
        }
        let value = Mat::from_vec(1, m.cols(), out);
        let rg = self.needs(a);
        self.push(value, rg, Op::ColSums(a))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, rg, Op::Sum(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let m = self.value(a);
        let mut out = Mat::zeros(idx.len(), m.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(m.row(i));
        }
        let rg = self.needs(a);
        self.push(out, rg, Op::GatherRows(a, Rc::new(idx.to_vec())))
    }

    /// Column-wise concatenation: `[a | b]`.
    pub fn hstack(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.rows() != mb.rows() {
            return Err(Error::ShapeMismatch {
                op: "hstack",
                a_rows: ma.rows(),
                a_cols: ma.cols(),
                b_rows: mb.rows(),
                b_cols: mb.cols(),
            });
        }
        let mut out = Mat::zeros(ma.rows(), ma.cols() + mb.cols());
        for i in 0..ma.rows() {
            out.row_mut(i)[..ma.cols()].copy_from_slice(ma.row(i));
            out.row_mut(i)[ma.cols()..].copy_from_slice(mb.row(i));
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, rg, Op::HStack(a, b)))
    }

    /// `out[i,j] = a[i,j] * v[i]` for a column vector `v`.
    pub fn scale_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ma, mv) = (self.value(a), self.value(v));
        if mv.cols() != 1 || mv.rows() != ma.rows() {
            return Err(shape_err("scale_rows", ma, mv));
        }
        let mut out = ma.clone();
        for i in 0..out.rows() {
            let s = mv.get(i, 0);
            for x in out.row_mut(i) {
                *x *= s;
            }
        }
        let rg = self.needs(a) || self.needs(v);
        Ok(self.push(out, rg, Op::ScaleRows(a, v)))
    }

    /// `out[i,j] = a[i,j] * v[j]` for a row vector `v`.
    pub fn scale_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ma, mv) = (self.value(a), self.value(v));
        if mv.rows() != 1 || mv.cols() != ma.cols() {
            return Err(shape_err("scale_cols", ma, mv));
        }
        let mut out = ma.clone();
        for i in 0..out.rows() {
            for (x, s) in out.row_mut(i).iter_mut().zip(mv.row(0)) {
                *x *= s;
            }
        }
        let rg = self.needs(a) || self.needs(v);
        Ok(self.push(out, rg, Op::ScaleCols(a, v)))
    }

    /// `out[i,j] = a[i,j] + v[j]` for a row vector `v` (bias add).
    pub fn add_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ma, mv) = (self.value(a), self.value(v));
        if mv.rows() != 1 || mv.cols() != ma.cols() {
            return Err(shape_err("add_row_vec", ma, mv));
        }
        let mut out = ma.clone();
        for i in 0..out.rows() {
            for (x, s) in out.row_mut(i).iter_mut().zip(mv.row(0)) {
                *x += s;
            }
        }
        let rg = self.needs(a) || self.needs(v);
        Ok(self.push(out, rg, Op::AddRowVec(a, v)))
    }

    /// `out[i,j] = a[i,j] - v[i]` for a column vector `v` (per-row threshold).
    pub fn sub_col_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ma, mv) = (self.value(a), self.value(v));
        if mv.cols() != 1 || mv.rows() != ma.rows() {
            return Err(shape_err("sub_col_vec", ma, mv));
        }
        let mut out = ma.clone();
        for i in 0..out.rows() {
            let s = mv.get(i, 0);
            for x in out.row_mut(i) {
                *x -= s;
            }
        }
        let rg = self.needs(a) || self.needs(v);
        Ok(self.push(out, rg, Op::SubColVec(a, v)))
    }

    /// Row-wise max-shifted logsumexp, returning a column vector.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let row = m.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let s: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
            out.push(mx + s.ln());
        }
        let value = Mat::from_vec(m.rows(), 1, out);
        let rg = self.needs(a);
        self.push(value, rg, Op::LogSumExpRows(a))
    }

    /// Row-wise Euclidean norm, returning a column vector.
    pub fn row_l2_norm(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out: Vec<f64> = (0..m.rows())
            .map(|i| m.row(i).iter().map(|&x| x * x).sum::<f64>().sqrt())
            .collect();
        let value = Mat::from_vec(m.rows(), 1, out);
        let rg = self.needs(a);
        self.push(value, rg, Op::RowL2Norm(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs(a);
        self.push(value, rg, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let m = self.value(a);
        if m.rows() * m.cols() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                a_rows: m.rows(),
                a_cols: m.cols(),
                b_rows: rows,
                b_cols: cols,
            });
        }
        let value = Mat::from_vec(rows, cols, m.as_slice().to_vec());
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::Reshape(a)))
    }

    /// Applies a constant symmetric operator: backward reuses the same apply.
    pub fn sym_apply(&mut self, op: Rc<dyn SymOp>, x: Var) -> Result<Var> {
        let m = self.value(x);
        if op.dim() != m.rows() {
            return Err(Error::ShapeMismatch {
                op: "sym_apply",
                a_rows: op.dim(),
                a_cols: op.dim(),
                b_rows: m.rows(),
                b_cols: m.cols(),
            });
        }
        let value = op.apply(m);
        let rg = self.needs(x);
        Ok(self.push(value, rg, Op::SymApply(x, op)))
    }

    /// Inverted dropout with a caller-supplied 0-or-1/keep mask.
    pub fn dropout(&mut self, a: Var, mask: Rc<Mat>) -> Result<Var> {
        let value = self.value(a).zip(&mask, |x, m| x * m)?;
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::Dropout(a, mask)))
    }

    /// Nonempty-hyperedge fallback: rows of `thresholded` listed in `rows`
    /// take their diagonal entry from `scores` instead; gradient for those
    /// entries flows through `scores`.
    pub fn row_fallback(&mut self, thresholded: Var, scores: Var, rows: &[usize]) -> Result<Var> {
        let (mt, ms) = (self.value(thresholded), self.value(scores));
        if mt.shape() != ms.shape() || mt.rows() != mt.cols() {
            return Err(shape_err("row_fallback", mt, ms));
        }
        let mut out = mt.clone();
        for &i in rows {
            out.set(i, i, ms.get(i, i));
        }
        let rg = self.needs(thresholded) || self.needs(scores);
        Ok(self.push(
            out,
            rg,
            Op::RowFallback {
                thresholded,
                scores,
                rows: Rc::new(rows.to_vec()),
            },
        ))
    }

    /// Cosine similarity matrix between the rows of `a` and the rows of `b`,
    /// composed from primitive ops so gradients flow through both sides.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.normalize_rows(a)?;
        let bn = self.normalize_rows(b)?;
        let bt = self.transpose(bn);
        self.matmul(an, bt)
    }

    fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let norms = self.row_l2_norm(a);
        let inv = self.recip(norms);
        self.scale_rows(a, inv)
    }

    /// Populates gradients of every reachable `requires_grad` node. The loss
    /// must be scalar. Calling twice without clearing accumulates into leaf
    /// gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(()); // loss does not depend on any trainable leaf
        }
        match &mut self.nodes[loss.0].grad {
            Some(g) => g.add_assign(&Mat::scalar(1.0)),
            slot => *slot = Some(Mat::scalar(1.0)),
        }

        for k in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(k);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Leaf);
            let g = if is_leaf {
                continue;
            } else {
                match node.grad.take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            let op = node.op.clone();
            let out_value = &node.value;
            backprop(before, &op, &g, out_value)?;
        }
        Ok(())
    }
}

fn shape_err(op: &'static str, a: &Mat, b: &Mat) -> Error {
    Error::ShapeMismatch {
        op,
        a_rows: a.rows(),
        a_cols: a.cols(),
        b_rows: b.rows(),
        b_cols: b.cols(),
    }
}

fn accumulate(nodes: &mut [Tensor], v: Var, g: Mat) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    debug_assert_eq!(node.value.shape(), g.shape());
    match &mut node.grad {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn backprop(nodes: &mut [Tensor], op: &Op, g: &Mat, out: &Mat) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[a.0].requires_grad {
                let ga = g.matmul_nt(&nodes[b.0].value)?;
                accumulate(nodes, *a, ga);
            }
            if nodes[b.0].requires_grad {
                let gb = nodes[a.0].value.matmul_tn(g)?;
                accumulate(nodes, *b, gb);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, *a, g.clone());
            accumulate(nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, *a, g.clone());
            accumulate(nodes, *b, g.scale(-1.0));
        }
        Op::ScalarMul(a, c) => accumulate(nodes, *a, g.scale(*c)),
        Op::Mul(a, b) => {
            if nodes[a.0].requires_grad {
                let ga = g.zip(&nodes[b.0].value, |x, y| x * y)?;
                accumulate(nodes, *a, ga);
            }
            if nodes[b.0].requires_grad {
                let gb = g.zip(&nodes[a.0].value, |x, y| x * y)?;
                accumulate(nodes, *b, gb);
            }
        }
        Op::Sigmoid(a) => {
            let ga = g.zip(out, |gv, y| gv * y * (1.0 - y))?;
            accumulate(nodes, *a, ga);
        }
        Op::Relu(a) => {
            let ga = g.zip(&nodes[a.0].value, |gv, x| if x > 0.0 { gv } else { 0.0 })?;
            accumulate(nodes, *a, ga);
        }
        Op::Exp(a) => {
            let ga = g.zip(out, |gv, y| gv * y)?;
            accumulate(nodes, *a, ga);
        }
        Op::Log(a) => {
            let ga = g.zip(&nodes[a.0].value, |gv, x| gv / x)?;
            accumulate(nodes, *a, ga);
        }
        Op::Rsqrt(a) => {
            let ga = g.zip(&nodes[a.0].value, |gv, x| {
                let base = x + EPSILON_GUARD;
                gv * (-0.5) / (base * base.sqrt())
            })?;
            accumulate(nodes, *a, ga);
        }
        Op::Recip(a) => {
            let ga = g.zip(out, |gv, y| -gv * y * y)?;
            accumulate(nodes, *a, ga);
        }
        Op::RowSums(a) => {
            let input = &nodes[a.0].value;
            let mut ga = Mat::zeros(input.rows(), input.cols());
            for i in 0..input.rows() {
                let gv = g.get(i, 0);
                for x in ga.row_mut(i) {
                    *x = gv;
                }
            }
            accumulate(nodes, *a, ga);
        }
        Op::ColSums(a) => {
            let input = &nodes[a.0].value;
            let mut ga = Mat::zeros(input.rows(), input.cols());
            for i in 0..input.rows() {
                ga.row_mut(i).copy_from_slice(g.row(0));
            }
            accumulate(nodes, *a, ga);
        }
        Op::Sum(a) => {
            let input = &nodes[a.0].value;
            let gv = g.scalar_value();
            let ga = Mat::from_vec(
                input.rows(),
                input.cols(),
                vec![gv; input.rows() * input.cols()],
            );
            accumulate(nodes, *a, ga);
        }
        Op::GatherRows(a, idx) => {
            let input = &nodes[a.0].value;
            let mut ga = Mat::zeros(input.rows(), input.cols());
            for (r, &i) in idx.iter().enumerate() {
                for (x, &gv) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                    *x += gv;
                }
            }
            accumulate(nodes, *a, ga);
        }
        Op::HStack(a, b) => {
            let ca = nodes[a.0].value.cols();
            let cb = nodes[b.0].value.cols();
            let rows = g.rows();
            let mut ga = Mat::zeros(rows, ca);
            let mut gb = Mat::zeros(rows, cb);
            for i in 0..rows {
                ga.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                gb.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
            }
            accumulate(nodes, *a, ga);
            accumulate(nodes, *b, gb);
        }
        Op::ScaleRows(a, v) => {
            let (av, vv) = (&nodes[a.0].value, &nodes[v.0].value);
            let ga = if nodes[a.0].requires_grad {
                let mut ga = g.clone();
                for i in 0..ga.rows() {
                    let s = vv.get(i, 0);
                    for x in ga.row_mut(i) {
                        *x *= s;
                    }
                }
                Some(ga)
            } else {
                None
            };
            let gv = if nodes[v.0].requires_grad {
                let gv_data: Vec<f64> = (0..av.rows())
                    .map(|i| g.row(i).iter().zip(av.row(i)).map(|(&gv, &x)| gv * x).sum())
                    .collect();
                Some(Mat::from_vec(av.rows(), 1, gv_data))
            } else {
                None
            };
            if let Some(ga) = ga {
                accumulate(nodes, *a, ga);
            }
            if let Some(gv) = gv {
                accumulate(nodes, *v, gv);
            }
        }
        Op::ScaleCols(a, v) => {
            let (av, vv) = (&nodes[a.0].value, &nodes[v.0].value);
            let ga = if nodes[a.0].requires_grad {
                let mut ga = g.clone();
                for i in 0..ga.rows() {
                    for (x, s) in ga.row_mut(i).iter_mut().zip(vv.row(0)) {
                        *x *= s;
                    }
                }
                Some(ga)
            } else {
                None
            };
            let gv = if nodes[v.0].requires_grad {
                let mut gv = vec![0.0; av.cols()];
                for i in 0..av.rows() {
                    for ((acc, &gvx), &x) in gv.iter_mut().zip(g.row(i)).zip(av.row(i)) {
                        *acc += gvx * x;
                    }
                }
                Some(Mat::from_vec(1, av.cols(), gv))
            } else {
                None
            };
            if let Some(ga) = ga {
                accumulate(nodes, *a, ga);
            }
            if let Some(gv) = gv {
                accumulate(nodes, *v, gv);
            }
        }
        Op::AddRowVec(a, v) => {
            accumulate(nodes, *a, g.clone());
            if nodes[v.0].requires_grad {
                let mut gv = vec![0.0; g.cols()];
                for i in 0..g.rows() {
                    for (acc, &x) in gv.iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
                accumulate(nodes, *v, Mat::from_vec(1, g.cols(), gv));
            }
        }
        Op::SubColVec(a, v) => {
            accumulate(nodes, *a, g.clone());
            if nodes[v.0].requires_grad {
                let gv: Vec<f64> = (0..g.rows()).map(|i| -g.row(i).iter().sum::<f64>()).collect();
                accumulate(nodes, *v, Mat::from_vec(g.rows(), 1, gv));
            }
        }
        Op::LogSumExpRows(a) => {
            let input = &nodes[a.0].value;
            let mut ga = Mat::zeros(input.rows(), input.cols());
            for i in 0..input.rows() {
                let lse = out.get(i, 0);
                let gv = g.get(i, 0);
                for (x, &xin) in ga.row_mut(i).iter_mut().zip(input.row(i)) {
                    *x = gv * (xin - lse).exp();
                }
            }
            accumulate(nodes, *a, ga);
        }
        Op::RowL2Norm(a) => {
            let input = &nodes[a.0].value;
            let mut ga = Mat::zeros(input.rows(), input.cols());
            for i in 0..input.rows() {
                let norm = out.get(i, 0).max(1e-300);
                let gv = g.get(i, 0);
                for (x, &xin) in ga.row_mut(i).iter_mut().zip(input.row(i)) {
                    *x = gv * xin / norm;
                }
            }
            accumulate(nodes, *a, ga);
        }
        Op::Transpose(a) => accumulate(nodes, *a, g.transpose()),
        Op::Reshape(a) => {
            let input = &nodes[a.0].value;
            let ga = Mat::from_vec(input.rows(), input.cols(), g.as_slice().to_vec());
            accumulate(nodes, *a, ga);
        }
        Op::SymApply(x, op) => {
            if nodes[x.0].requires_grad {
                accumulate(nodes, *x, op.apply(g));
            }
        }
        Op::Dropout(a, mask) => {
            let ga = g.zip(mask, |gv, m| gv * m)?;
            accumulate(nodes, *a, ga);
        }
        Op::RowFallback {
            thresholded,
            scores,
            rows,
        } => {
            let mut gt = g.clone();
            let n = g.rows();
            let mut gs = Mat::zeros(n, n);
            for &i in rows.iter() {
                gs.set(i, i, g.get(i, i));
                gt.set(i, i, 0.0);
            }
            accumulate(nodes, *thresholded, gt);
            accumulate(nodes, *scores, gs);
        }
    }
    Ok(())
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::scalar(0.0));
        let y = t.sigmoid(x);
        assert_abs_diff_eq!(t.value(y).scalar_value(), 0.5);
        t.backward(y).unwrap();
        assert_abs_diff_eq!(t.grad(x).unwrap().scalar_value(), 0.25);
    }

    #[test]
    fn relu_subgradient() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::from_vec(1, 3, vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).as_slice(), &[0.0, 0.0, 2.0]);
        let s = t.reduce_sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn logsumexp_of_two_zeros() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::from_vec(1, 2, vec![0.0, 0.0]));
        let y = t.logsumexp_rows(x);
        assert_abs_diff_eq!(t.value(y).scalar_value(), 2.0_f64.ln(), epsilon = 1e-12);
        t.backward(y).unwrap();
        let g = t.grad(x).unwrap();
        assert_abs_diff_eq!(g.get(0, 0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.get(0, 1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn logsumexp_survives_large_inputs() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::from_vec(1, 2, vec![700.0, -700.0]));
        let y = t.logsumexp_rows(x);
        assert!(t.value(y).scalar_value().is_finite());
        assert_abs_diff_eq!(t.value(y).scalar_value(), 700.0, epsilon = 1e-9);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::from_vec(3, 1, vec![1.0, 2.0, 3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.reduce_sum(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::scalar(3.0));
        let y = t.add(x, x).unwrap();
        t.backward(y).unwrap();
        assert_abs_diff_eq!(t.grad(x).unwrap().scalar_value(), 2.0);
    }

    #[test]
    fn double_backward_accumulates_on_leaves() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::scalar(2.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        t.backward(y).unwrap();
        assert_abs_diff_eq!(t.grad(x).unwrap().scalar_value(), 8.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::zeros(2, 2));
        assert!(matches!(
            t.backward(x),
            Err(Error::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn row_fallback_routes_gradient() {
        let mut t = Tape::new();
        let thr = t.leaf(Mat::zeros(2, 2));
        let scores = t.leaf(Mat::from_vec(2, 2, vec![0.5, 0.3, 0.2, 0.7]));
        let out = t.row_fallback(thr, scores, &[1]).unwrap();
        assert_eq!(t.value(out).as_slice(), &[0.0, 0.0, 0.0, 0.7]);
        let s = t.reduce_sum(out);
        t.backward(s).unwrap();
        assert_eq!(t.grad(scores).unwrap().as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        // Thresholded grad is 1 everywhere except the replaced diagonal cell.
        assert_eq!(t.grad(thr).unwrap().as_slice(), &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn determinism_bitwise() {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(Mat::from_vec(2, 2, vec![0.3, -1.2, 2.2, 0.01]));
            let s = t.sigmoid(x);
            let e = t.exp(s);
            let l = t.logsumexp_rows(e);
            let loss = t.reduce_sum(l);
            t.backward(loss).unwrap();
            (
                t.value(loss).scalar_value().to_bits(),
                t.grad(x).unwrap().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
