//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive in execution order. Each primitive
//! stores its output value plus whatever its pullback needs; `backward`
//! walks the record in reverse and accumulates adjoints into the grad buffers
//! of leaves that were created with `requires_grad`.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// Which direction softmax normalizes along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Each row sums to one.
    Rows,
    /// Each column sums to one.
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Subtract,
    Hadamard,
    Sigmoid,
    Relu,
    Log,
    Exp,
    Softplus,
    ScalarMultiply(f64),
}

/// Running moments of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BnStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// Zero mean, unit variance.
    pub fn new(features: usize) -> Self {
        Self {
            mean: Tensor::zeros(1, features),
            var: Tensor::ones(1, features),
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.mean.cols()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Log(Var),
    Exp(Var),
    Softplus(Var),
    Abs(Var),
    Powf(Var, f64),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    ScaleBy(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    ColMean(Var),
    ColVar(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    Pick(Var, Vec<usize>),
    MaskedSoftmax {
        scores: Var,
        weights: Var,
        shifted_exp: Tensor,
        norm: Vec<f64>,
    },
    L2Norm(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>),
    PairsToSym(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Tensor,
        train: bool,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
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

/// `(argmax, lse - max)` of a row; the shifted log-sum-exp stays accurate
/// when one entry dominates.
fn row_lse(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    let max = row[best];
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != best)
        .map(|(_, v)| (v - max).exp())
        .sum();
    (best, rest.ln_1p())
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Every leaf whose gradient is tracked, in creation order.
    pub fn trainable_leaves(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(i, _)| Var(i))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf; zeros when nothing has flowed into it.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Tensor::zeros(r, c)
            }
        }
    }

    /// True when some backward pass has deposited a gradient at `v`.
    pub fn has_grad(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.value(a), self.value(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if p.fract() != 0.0 && self.value(a).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain {
                op: "powf",
                detail: "negative base with fractional exponent".into(),
            });
        }
        Ok(self.unary(a, Op::Powf(a, p), |x| x.powf(p)))
    }

    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = |b: Option<Var>| b.ok_or_else(|| Error::invalid(format!("{kind:?} needs two operands")));
        match kind {
            ElementwiseKind::Add => self.add(a, need_b(b)?),
            ElementwiseKind::Subtract => self.sub(a, need_b(b)?),
            ElementwiseKind::Hadamard => self.mul(a, need_b(b)?),
            ElementwiseKind::Sigmoid => Ok(self.sigmoid(a)),
            ElementwiseKind::Relu => Ok(self.relu(a)),
            ElementwiseKind::Log => self.log(a),
            ElementwiseKind::Exp => Ok(self.exp(a)),
            ElementwiseKind::Softplus => Ok(self.softplus(a)),
            ElementwiseKind::ScalarMultiply(s) => Ok(self.scale(a, s)),
        }
    }

    /// `a + 1·row`: adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        if self.shape(row) != (1, ca) {
            return Err(shape_err("add_row", self.value(a), self.value(row)));
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..ra {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Multiplies row `i` of `a` by `col[i]` for an r×1 `col`.
    pub fn scale_rows(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ra, _) = self.shape(a);
        if self.shape(col) != (ra, 1) {
            return Err(shape_err("scale_rows", self.value(a), self.value(col)));
        }
        let mut value = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, s) in c.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(value, Op::ScaleRows(a, col), rg))
    }

    /// Multiplies every entry of `a` by the 1×1 tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(shape_err("scale_by", self.value(a), self.value(s)));
        }
        let k = self.value(s).item();
        let value = self.value(a).scale(k);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(value, Op::ScaleBy(a, s), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Column sums, 1×c.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = t.col_mean().scale(t.rows() as f64);
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Row sums, r×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let sums: Vec<f64> = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::column_vector(&sums), Op::SumCols(a), rg)
    }

    /// Per-column mean over rows, 1×c.
    pub fn col_mean(&mut self, a: Var) -> Var {
        let value = self.value(a).col_mean();
        let rg = self.rg(a);
        self.push(value, Op::ColMean(a), rg)
    }

    /// Per-column population variance over rows, 1×c.
    pub fn col_var(&mut self, a: Var) -> Var {
        let value = self.value(a).col_var();
        let rg = self.rg(a);
        self.push(value, Op::ColVar(a), rg)
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        if !self.value(a).is_finite() {
            return Err(Error::NonFinite("softmax"));
        }
        match axis {
            Axis::Rows => {
                let value = self.value(a).softmax_rows();
                let rg = self.rg(a);
                Ok(self.push(value, Op::SoftmaxRows(a), rg))
            }
            Axis::Cols => {
                let t = self.transpose(a);
                let s = self.softmax(t, Axis::Rows)?;
                Ok(self.transpose(s))
            }
        }
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.is_finite() {
            return Err(Error::NonFinite("log_softmax"));
        }
        let mut value = t.clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let (best, shifted) = row_lse(row);
            let max = row[best];
            row.iter_mut().for_each(|v| *v = (*v - max) - shifted);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmaxRows(a), rg))
    }

    /// Mean over rows of `-log softmax(logits)[row, label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (r, c) = t.shape();
        if labels.len() != r {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: (r, c),
                rhs: (labels.len(), 1),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label { label, classes: c });
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("cross_entropy"));
        }
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = t.row(i);
            let (best, shifted) = row_lse(row);
            loss += (row[best] - row[y]) + shifted;
        }
        let probs = t.softmax_rows();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / r as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Selects `a[i, idx[i]]` into an r×1 column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() {
            return Err(Error::Shape {
                op: "pick",
                lhs: t.shape(),
                rhs: (idx.len(), 1),
            });
        }
        if let Some(&label) = idx.iter().find(|&&j| j >= t.cols()) {
            return Err(Error::Label {
                label,
                classes: t.cols(),
            });
        }
        let vals: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| t[(i, j)]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::column_vector(&vals), Op::Pick(a, idx.to_vec()), rg))
    }

    /// Row-wise `w ⊙ exp(s) / Σ w ⊙ exp(s)`.
    ///
    /// Entries with zero weight come out exactly zero, so a 0/1 weight
    /// matrix yields a softmax restricted to the selected entries.
    pub fn masked_softmax(&mut self, scores: Var, weights: Var) -> Result<Var> {
        self.same_shape("masked_softmax", scores, weights)?;
        let s = self.value(scores);
        let w = self.value(weights);
        if !s.is_finite() || !w.is_finite() {
            return Err(Error::NonFinite("masked_softmax"));
        }
        let (r, c) = s.shape();
        let mut shifted_exp = Tensor::zeros(r, c);
        let mut out = Tensor::zeros(r, c);
        let mut norm = vec![0.0; r];
        for i in 0..r {
            let max = (0..c)
                .filter(|&j| w[(i, j)] != 0.0)
                .map(|j| s[(i, j)])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Domain {
                    op: "masked_softmax",
                    detail: format!("row {i} has no positive weight"),
                });
            }
            let mut z = 0.0;
            for j in 0..c {
                let e = (s[(i, j)] - max).exp();
                shifted_exp[(i, j)] = e;
                z += w[(i, j)] * e;
            }
            if !(z > 0.0) {
                return Err(Error::Domain {
                    op: "masked_softmax",
                    detail: format!("row {i} normalizer {z}"),
                });
            }
            norm[i] = z;
            for j in 0..c {
                out[(i, j)] = w[(i, j)] * shifted_exp[(i, j)] / z;
            }
        }
        let rg = self.rg(scores) || self.rg(weights);
        Ok(self.push(
            out,
            Op::MaskedSoftmax {
                scores,
                weights,
                shifted_exp,
                norm,
            },
            rg,
        ))
    }

    /// Euclidean norm of all entries, 1×1. Subgradient zero at the origin.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let n = self.value(a).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(a);
        self.push(Tensor::scalar(n), Op::L2Norm(a), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.rows() {
            return Err(Error::invalid(format!(
                "row slice {start}..{end} of {:?}",
                t.shape()
            )));
        }
        let c = t.cols();
        let value = Tensor::from_vec(end - start, c, t.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(Error::invalid(format!(
                "column slice {start}..{end} of {:?}",
                t.shape()
            )));
        }
        let value = Tensor::from_fn(t.rows(), end - start, |i, j| t[(i, start + j)]);
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let c = self.shape(*first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::from_vec(rows, c, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row `r` of the output is row `idx[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of {} rows",
                t.rows()
            )));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::from_vec(idx.len(), c, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Mean of consecutive row blocks of the given sizes; one output row per block.
    pub fn segment_mean(&mut self, a: Var, sizes: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if sizes.iter().sum::<usize>() != t.rows() || sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "segment sizes {sizes:?} do not tile {} rows",
                t.rows()
            )));
        }
        let c = t.cols();
        let mut out = Tensor::zeros(sizes.len(), c);
        let mut start = 0;
        for (s, &n) in sizes.iter().enumerate() {
            for i in start..start + n {
                for (o, v) in out.row_mut(s).iter_mut().zip(t.row(i)) {
                    *o += v;
                }
            }
            out.row_mut(s).iter_mut().for_each(|v| *v /= n as f64);
            start += n;
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMean(a, sizes.to_vec()), rg))
    }

    /// Expands the `n(n-1)/2` pair values in `v` (upper-triangle row-major
    /// order) into a symmetric n×n matrix with zero diagonal.
    pub fn pairs_to_sym(&mut self, v: Var, n: usize) -> Result<Var> {
        let t = self.value(v);
        let pairs = n * n.saturating_sub(1) / 2;
        if t.shape() != (pairs, 1) {
            return Err(Error::Shape {
                op: "pairs_to_sym",
                lhs: t.shape(),
                rhs: (pairs, 1),
            });
        }
        let mut out = Tensor::zeros(n, n);
        let mut r = 0;
        for j in 0..n {
            for k in j + 1..n {
                let x = t.data()[r];
                out[(j, k)] = x;
                out[(k, j)] = x;
                r += 1;
            }
        }
        let rg = self.rg(v);
        Ok(self.push(out, Op::PairsToSym(v), rg))
    }

    /// Batch normalization over rows.
    ///
    /// Train mode normalizes with the batch's population statistics and
    /// returns the running moments after one exponential-moving-average
    /// update; eval mode normalizes with `stats` and returns `None`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BnStats,
        mode: Mode,
    ) -> Result<(Var, Option<BnStats>)> {
        let t = self.value(x);
        let (r, c) = t.shape();
        if stats.features() != c || self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: (r, c),
                rhs: (1, stats.features()),
            });
        }
        let (mean, var, update) = match mode {
            Mode::Train => {
                let mean = t.col_mean();
                let var = t.col_var();
                let m = stats.momentum;
                let updated = BnStats {
                    mean: stats.mean.zip_map(&mean, |old, b| (1.0 - m) * old + m * b),
                    var: stats.var.zip_map(&var, |old, b| (1.0 - m) * old + m * b),
                    momentum: m,
                    eps: stats.eps,
                };
                (mean, var, Some(updated))
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone(), None),
        };
        let inv_std = var.map(|v| 1.0 / (v + stats.eps).sqrt());
        let xhat = Tensor::from_fn(r, c, |i, j| (t[(i, j)] - mean.data()[j]) * inv_std.data()[j]);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let out = Tensor::from_fn(r, c, |i, j| g[j] * xhat[(i, j)] + b[j]);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let var_out = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            rg,
        );
        Ok((var_out, update))
    }

    /// Reverse sweep from a 1×1 output, accumulating into leaf grads.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.shape(output) != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.pullback(i, &g, &mut adj);
        }
        Ok(())
    }

    fn pullback(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let val = |v: Var| &nodes[v.0].value;
        let mut send = |v: Var, contrib: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        let wants = |v: Var| nodes[v.0].requires_grad;

        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let mut ga = Tensor::zeros(val(*a).rows(), val(*a).cols());
                    gemm(g, false, val(*b), true, &mut ga, 0.0);
                    send(*a, ga);
                }
                if wants(*b) {
                    let mut gb = Tensor::zeros(val(*b).rows(), val(*b).cols());
                    gemm(val(*a), true, g, false, &mut gb, 0.0);
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    send(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => send(*a, g.scale(*s)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Sigmoid(a) => send(*a, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::Relu(a) => send(*a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::LeakyRelu(a, slope) => send(
                *a,
                g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { slope * gv }),
            ),
            Op::Log(a) => send(*a, g.zip_map(val(*a), |gv, x| gv / x)),
            Op::Exp(a) => send(*a, g.zip_map(out, |gv, y| gv * y)),
            Op::Softplus(a) => send(*a, g.zip_map(val(*a), |gv, x| gv * sigmoid(x))),
            Op::Abs(a) => send(
                *a,
                g.zip_map(val(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Powf(a, p) => send(*a, g.zip_map(val(*a), |gv, x| gv * p * x.powf(p - 1.0))),
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if wants(*row) {
                    send(*row, g.col_mean().scale(g.rows() as f64));
                }
            }
            Op::ScaleRows(a, col) => {
                let c = val(*col);
                if wants(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = c.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    send(*a, ga);
                }
                if wants(*col) {
                    let av = val(*a);
                    let gc: Vec<f64> = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    send(*col, Tensor::column_vector(&gc));
                }
            }
            Op::ScaleBy(a, s) => {
                if wants(*a) {
                    send(*a, g.scale(val(*s).item()));
                }
                if wants(*s) {
                    let d: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    send(*s, Tensor::scalar(d));
                }
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::full(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::full(r, c, g.item() / (r * c) as f64));
            }
            Op::SumRows(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::from_fn(r, c, |_, j| g.data()[j]));
            }
            Op::SumCols(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::from_fn(r, c, |i, _| g.data()[i]));
            }
            Op::ColMean(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::from_fn(r, c, |_, j| g.data()[j] / r as f64));
            }
            Op::ColVar(a) => {
                let x = val(*a);
                let (r, c) = x.shape();
                let mean = x.col_mean();
                send(
                    *a,
                    Tensor::from_fn(r, c, |i, j| {
                        g.data()[j] * 2.0 * (x[(i, j)] - mean.data()[j]) / r as f64
                    }),
                );
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let dot: f64 = g.row(r).iter().zip(out.row(r)).map(|(x, y)| x * y).sum();
                    for (j, v) in ga.row_mut(r).iter_mut().enumerate() {
                        *v = out[(r, j)] * (g[(r, j)] - dot);
                    }
                }
                send(*a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let gs: f64 = g.row(r).iter().sum();
                    for (j, v) in ga.row_mut(r).iter_mut().enumerate() {
                        *v = g[(r, j)] - out[(r, j)].exp() * gs;
                    }
                }
                send(*a, ga);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let scale = g.item() / labels.len() as f64;
                let mut ga = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    ga[(r, y)] -= 1.0;
                }
                send(*logits, ga.scale(scale));
            }
            Op::Pick(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (row, &j) in idx.iter().enumerate() {
                    ga[(row, j)] = g.data()[row];
                }
                send(*a, ga);
            }
            Op::MaskedSoftmax {
                scores,
                weights,
                shifted_exp,
                norm,
            } => {
                let w = val(*weights);
                let (r, c) = out.shape();
                // dL/du for u = w ⊙ exp(s - max): (g - <g, out>) / Z
                let mut du = Tensor::zeros(r, c);
                for i in 0..r {
                    let dot: f64 = g.row(i).iter().zip(out.row(i)).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        du[(i, j)] = (g[(i, j)] - dot) / norm[i];
                    }
                }
                if wants(*scores) {
                    send(
                        *scores,
                        Tensor::from_fn(r, c, |i, j| du[(i, j)] * w[(i, j)] * shifted_exp[(i, j)]),
                    );
                }
                if wants(*weights) {
                    send(*weights, du.zip_map(shifted_exp, |d, e| d * e));
                }
            }
            Op::L2Norm(a) => {
                let n = out.item();
                if n > 0.0 {
                    send(*a, val(*a).scale(g.item() / n));
                } else {
                    let (r, c) = val(*a).shape();
                    send(*a, Tensor::zeros(r, c));
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                send(*a, ga);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..g.cols() {
                        ga[(i, start + j)] = g[(i, j)];
                    }
                }
                send(*a, ga);
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    if wants(p) {
                        let chunk = g.data()[offset * c..(offset + rows) * c].to_vec();
                        send(p, Tensor::from_vec(rows, c, chunk).expect("slice shape"));
                    }
                    offset += rows;
                }
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (row, &src) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(row)) {
                        *o += v;
                    }
                }
                send(*a, ga);
            }
            Op::SegmentMean(a, sizes) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                let mut start = 0;
                for (s, &n) in sizes.iter().enumerate() {
                    for row in start..start + n {
                        for (o, v) in ga.row_mut(row).iter_mut().zip(g.row(s)) {
                            *o = v / n as f64;
                        }
                    }
                    start += n;
                }
                send(*a, ga);
            }
            Op::PairsToSym(v) => {
                let n = out.rows();
                let mut gv = Vec::with_capacity(val(*v).rows());
                for j in 0..n {
                    for k in j + 1..n {
                        gv.push(g[(j, k)] + g[(k, j)]);
                    }
                }
                send(*v, Tensor::column_vector(&gv));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (r, c) = xhat.shape();
                if wants(*beta) {
                    send(*beta, g.col_mean().scale(r as f64));
                }
                if wants(*gamma) {
                    let gg = g.zip_map(xhat, |a, b| a * b);
                    send(*gamma, gg.col_mean().scale(r as f64));
                }
                if wants(*x) {
                    let gam = val(*gamma).data();
                    let dxhat = Tensor::from_fn(r, c, |i, j| g[(i, j)] * gam[j]);
                    let gx = if *train {
                        let sum_d = dxhat.col_mean().scale(r as f64);
                        let sum_dx = dxhat.zip_map(xhat, |a, b| a * b).col_mean().scale(r as f64);
                        let n = r as f64;
                        Tensor::from_fn(r, c, |i, j| {
                            inv_std.data()[j] / n
                                * (n * dxhat[(i, j)]
                                    - sum_d.data()[j]
                                    - xhat[(i, j)] * sum_dx.data()[j])
                        })
                    } else {
                        Tensor::from_fn(r, c, |i, j| dxhat[(i, j)] * inv_std.data()[j])
                    };
                    send(*x, gx);
                }
            }
        }
    }
}
