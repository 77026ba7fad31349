use std::sync::Arc;

use super::params::{ParamId, ParamSet};
use super::sparse::CsrMatrix;
use super::tensor::Tensor;
use super::DiffError;
use crate::par::{self, Execution};

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fixed sparse operator together with its transpose, used by [`Graph::spmm`].
#[derive(Debug, Clone)]
pub struct SparseOperator {
    forward: CsrMatrix,
    transpose: CsrMatrix,
}

impl SparseOperator {
    pub fn new(m: CsrMatrix) -> Self {
        let transpose = m.transpose();
        SparseOperator {
            forward: m,
            transpose,
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.forward
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    SpMM(Arc<SparseOperator>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Div(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize, len: usize },
    Gather { x: Var, rows: Vec<usize> },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Dot(Var, Var),
    SqNorm(Var),
    Sigmoid(Var),
    Ln(Var),
    Exp(Var),
    Softplus(Var),
    Tanh(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clip { x: Var, lo: f64, hi: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "spmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::Div(..) => "div",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Gather { .. } => "gather",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::Dot(..) => "dot",
            Op::SqNorm(..) => "sq_norm",
            Op::Sigmoid(..) => "sigmoid",
            Op::Ln(..) => "ln",
            Op::Exp(..) => "exp",
            Op::Softplus(..) => "softplus",
            Op::Tanh(..) => "tanh",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Clip { .. } => "clip",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::Mul(a, b)
            | Op::MulCol(a, b)
            | Op::Div(a, b)
            | Op::Dot(a, b) => vec![*a, *b],
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.clone(),
            Op::SpMM(_, x)
            | Op::SliceCols { x, .. }
            | Op::Gather { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::RowSum(x)
            | Op::SqNorm(x)
            | Op::Sigmoid(x)
            | Op::Ln(x)
            | Op::Exp(x)
            | Op::Softplus(x)
            | Op::Tanh(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Clip { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Dynamic computation graph recorded in insertion order.
///
/// Every operation validates shapes, evaluates eagerly, and appends one node.
/// [`Graph::backward`] walks the nodes in exact reverse insertion order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    exec: Execution,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn with_execution(exec: Execution) -> Self {
        Graph {
            exec,
            ..Graph::default()
        }
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

    /// Gradient of the last backward loss with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Records `v`'s op name; useful in diagnostics.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>) -> Result<Var, DiffError> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value: Tensor::from_parts_unchecked(shape, values),
            needs_grad,
        });
        Ok(Var(id))
    }

    /// Records a constant input. No gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf { param: None },
            value: t,
            needs_grad: false,
        });
        Var(id)
    }

    /// Records a leaf whose gradient is wanted, without tying it to a [`ParamSet`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf { param: None },
            value: t.with_grad(),
            needs_grad: true,
        });
        Var(id)
    }

    /// Records a copy of parameter `id` as a differentiable leaf.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let t = params.get(id);
        let id_node = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf { param: Some(id) },
            value: Tensor::from_parts_unchecked(t.shape().to_vec(), t.values().to_vec()),
            needs_grad: true,
        });
        Var(id_node)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    fn mismatch(&self, op: &'static str, vars: &[Var]) -> DiffError {
        DiffError::ShapeMismatch {
            op,
            shapes: vars
                .iter()
                .map(|v| self.nodes[v.0].value.shape().to_vec())
                .collect(),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), DiffError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(self.mismatch(op, &[a, b]));
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", &[a, b]));
        }
        let mut out = vec![0.0; n * m];
        {
            let (av, bv) = (self.vals(a), self.vals(b));
            par::for_each_chunk_mut(&mut out, m, self.exec, |i, row| {
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * m..(p + 1) * m];
                    for (o, y) in row.iter_mut().zip(brow) {
                        *o += x * y;
                    }
                }
            });
        }
        self.push(Op::MatMul(a, b), vec![n, m], out)
    }

    /// Sparse-by-dense product `op.matrix() * x`.
    pub fn spmm(&mut self, op: Arc<SparseOperator>, x: Var) -> Result<Var, DiffError> {
        let (k, m) = self.dims(x);
        let adj = op.matrix();
        if adj.cols() != k {
            return Err(DiffError::ShapeMismatch {
                op: "spmm",
                shapes: vec![vec![adj.rows(), adj.cols()], self.value(x).shape().to_vec()],
            });
        }
        let out = sparse_mul(adj, self.vals(x), m, self.exec);
        let rows = adj.rows();
        self.push(Op::SpMM(op, x), vec![rows, m], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = zip_map(self.vals(a), self.vals(b), |x, y| x + y);
        self.push(Op::Add(a, b), vec![r, c], out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out = zip_map(self.vals(a), self.vals(b), |x, y| x - y);
        self.push(Op::Sub(a, b), vec![r, c], out)
    }

    /// Adds the `1 x d` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (n, d) = self.dims(a);
        if self.dims(b) != (1, d) {
            return Err(self.mismatch("add_row", &[a, b]));
        }
        let bv = self.vals(b);
        let out: Vec<f64> = self
            .vals(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % d])
            .collect();
        self.push(Op::AddRow(a, b), vec![n, d], out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = zip_map(self.vals(a), self.vals(b), |x, y| x * y);
        self.push(Op::Mul(a, b), vec![r, c], out)
    }

    /// Scales row `i` of `a` by `c[i]`, where `c` is `n x 1`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var, DiffError> {
        let (n, d) = self.dims(a);
        if self.dims(c) != (n, 1) {
            return Err(self.mismatch("mul_col", &[a, c]));
        }
        let cv = self.vals(c);
        let out: Vec<f64> = self
            .vals(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x * cv[i / d])
            .collect();
        self.push(Op::MulCol(a, c), vec![n, d], out)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (r, c) = self.same_shape("div", a, b)?;
        let out = zip_map(self.vals(a), self.vals(b), |x, y| x / y);
        self.push(Op::Div(a, b), vec![r, c], out)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, DiffError> {
        let n = match xs.first() {
            Some(&v) => self.dims(v).0,
            None => return Err(DiffError::ShapeMismatch { op: "concat_cols", shapes: vec![] }),
        };
        if xs.iter().any(|&v| self.dims(v).0 != n) {
            return Err(self.mismatch("concat_cols", xs));
        }
        let total: usize = xs.iter().map(|&v| self.dims(v).1).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &v in xs {
                out.extend_from_slice(self.value(v).row(i));
            }
        }
        self.push(Op::ConcatCols(xs.to_vec()), vec![n, total], out)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var, DiffError> {
        let d = match xs.first() {
            Some(&v) => self.dims(v).1,
            None => return Err(DiffError::ShapeMismatch { op: "concat_rows", shapes: vec![] }),
        };
        if xs.iter().any(|&v| self.dims(v).1 != d) {
            return Err(self.mismatch("concat_rows", xs));
        }
        let mut out = Vec::new();
        for &v in xs {
            out.extend_from_slice(self.vals(v));
        }
        let n = out.len() / d.max(1);
        self.push(Op::ConcatRows(xs.to_vec()), vec![n, d], out)
    }

    /// Columns `start..start + len` of `x` (the split operation).
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (n, d) = self.dims(x);
        if start + len > d || len == 0 {
            return Err(self.mismatch("slice_cols", &[x]));
        }
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&self.value(x).row(i)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start, len }, vec![n, len], out)
    }

    /// Rows of `x` at `rows`, in the given order (repeats allowed).
    pub fn gather(&mut self, x: Var, rows: &[usize]) -> Result<Var, DiffError> {
        let (n, d) = self.dims(x);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(DiffError::IndexOutOfRange {
                    op: "gather",
                    index: r,
                    len: n,
                });
            }
            out.extend_from_slice(self.value(x).row(r));
        }
        self.push(
            Op::Gather {
                x,
                rows: rows.to_vec(),
            },
            vec![rows.len(), d],
            out,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.vals(x).iter().sum();
        self.push(Op::Sum(x), vec![1, 1], vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.vals(x);
        if v.is_empty() {
            return Err(self.mismatch("mean", &[x]));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(x), vec![1, 1], vec![m])
    }

    /// Sum over columns: `n x d -> n x 1`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let (n, d) = self.dims(x);
        let v = self.vals(x);
        let out = (0..n).map(|i| v[i * d..(i + 1) * d].iter().sum()).collect();
        self.push(Op::RowSum(x), vec![n, 1], out)
    }

    /// Row-wise inner product: `n x d, n x d -> n x 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (n, d) = self.same_shape("dot", a, b)?;
        let (av, bv) = (self.vals(a), self.vals(b));
        let out = (0..n)
            .map(|i| {
                av[i * d..(i + 1) * d]
                    .iter()
                    .zip(&bv[i * d..(i + 1) * d])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        self.push(Op::Dot(a, b), vec![n, 1], out)
    }

    /// Row-wise squared L2 norm: `n x d -> n x 1`.
    pub fn sq_norm(&mut self, x: Var) -> Result<Var, DiffError> {
        let (n, d) = self.dims(x);
        let v = self.vals(x);
        let out = (0..n)
            .map(|i| v[i * d..(i + 1) * d].iter().map(|a| a * a).sum())
            .collect();
        self.push(Op::SqNorm(x), vec![n, 1], out)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, DiffError> {
        let shape = self.value(x).dims();
        let out = self.vals(x).iter().map(|&a| f(a)).collect();
        self.push(op, vec![shape.0, shape.1], out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        self.unary(x, Op::Scale(x, c), |a| a * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        self.unary(x, Op::AddScalar(x), |a| a + c)
    }

    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, DiffError> {
        self.unary(x, Op::Clip { x, lo, hi }, |a| a.clamp(lo, hi))
    }

    /// Populates gradients of `loss` with respect to every node that depends
    /// on a differentiable leaf. Repeated calls start from scratch.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(DiffError::NonScalarLoss { shape });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            if self.nodes[id].needs_grad {
                self.propagate(id, &g);
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let op = self.nodes[id].op.clone();
        let y = self.nodes[id].value.values().to_vec();
        match op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(a);
                let m = self.dims(b).1;
                if self.nodes[a.0].needs_grad {
                    let bv = self.vals(b);
                    let mut ga = vec![0.0; n * k];
                    par::for_each_chunk_mut(&mut ga, k, self.exec, |i, row| {
                        let grow = &g[i * m..(i + 1) * m];
                        for (p, o) in row.iter_mut().enumerate() {
                            let brow = &bv[p * m..(p + 1) * m];
                            *o = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    });
                    self.acc(a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let av = self.vals(a);
                    let mut gb = vec![0.0; k * m];
                    par::for_each_chunk_mut(&mut gb, m, self.exec, |p, row| {
                        for i in 0..n {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, gy) in row.iter_mut().zip(&g[i * m..(i + 1) * m]) {
                                *o += x * gy;
                            }
                        }
                    });
                    self.acc(b, gb);
                }
            }
            Op::SpMM(op, x) => {
                let m = self.dims(x).1;
                let gx = sparse_mul(&op.transpose, g, m, self.exec);
                self.acc(x, gx);
            }
            Op::Add(a, b) => {
                self.acc(a, g.to_vec());
                self.acc(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(a, g.to_vec());
                self.acc(b, g.iter().map(|x| -x).collect());
            }
            Op::AddRow(a, b) => {
                let d = self.dims(b).1;
                let mut gb = vec![0.0; d];
                for (i, x) in g.iter().enumerate() {
                    gb[i % d] += x;
                }
                self.acc(a, g.to_vec());
                self.acc(b, gb);
            }
            Op::Mul(a, b) => {
                let ga = zip_map(g, self.vals(b), |x, y| x * y);
                let gb = zip_map(g, self.vals(a), |x, y| x * y);
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::MulCol(a, c) => {
                let (n, d) = self.dims(a);
                let (av, cv) = (self.vals(a), self.vals(c));
                let ga: Vec<f64> = g.iter().enumerate().map(|(i, x)| x * cv[i / d]).collect();
                let gc: Vec<f64> = (0..n)
                    .map(|i| {
                        g[i * d..(i + 1) * d]
                            .iter()
                            .zip(&av[i * d..(i + 1) * d])
                            .map(|(x, y)| x * y)
                            .sum()
                    })
                    .collect();
                self.acc(a, ga);
                self.acc(c, gc);
            }
            Op::Div(a, b) => {
                let bv = self.vals(b);
                let ga = zip_map(g, bv, |x, y| x / y);
                let gb: Vec<f64> = g
                    .iter()
                    .zip(bv)
                    .zip(&y)
                    .map(|((x, bb), q)| -x * q / bb)
                    .collect();
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::ConcatCols(xs) => {
                let total: usize = xs.iter().map(|&v| self.dims(v).1).sum();
                let n = g.len() / total.max(1);
                let mut offset = 0;
                for v in xs {
                    let d = self.dims(v).1;
                    let mut gv = Vec::with_capacity(n * d);
                    for i in 0..n {
                        gv.extend_from_slice(&g[i * total + offset..i * total + offset + d]);
                    }
                    offset += d;
                    self.acc(v, gv);
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for v in xs {
                    let len = self.value(v).len();
                    self.acc(v, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (n, d) = self.dims(x);
                let mut gx = vec![0.0; n * d];
                for i in 0..n {
                    gx[i * d + start..i * d + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                self.acc(x, gx);
            }
            Op::Gather { x, rows } => {
                let (n, d) = self.dims(x);
                let mut gx = vec![0.0; n * d];
                for (j, &r) in rows.iter().enumerate() {
                    for (o, v) in gx[r * d..(r + 1) * d].iter_mut().zip(&g[j * d..(j + 1) * d]) {
                        *o += v;
                    }
                }
                self.acc(x, gx);
            }
            Op::Sum(x) => {
                let len = self.value(x).len();
                self.acc(x, vec![g[0]; len]);
            }
            Op::Mean(x) => {
                let len = self.value(x).len();
                self.acc(x, vec![g[0] / len as f64; len]);
            }
            Op::RowSum(x) => {
                let d = self.dims(x).1;
                let len = self.value(x).len();
                self.acc(x, (0..len).map(|i| g[i / d]).collect());
            }
            Op::Dot(a, b) => {
                let d = self.dims(a).1;
                let (av, bv) = (self.vals(a), self.vals(b));
                let ga: Vec<f64> = bv.iter().enumerate().map(|(i, y)| g[i / d] * y).collect();
                let gb: Vec<f64> = av.iter().enumerate().map(|(i, x)| g[i / d] * x).collect();
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::SqNorm(x) => {
                let d = self.dims(x).1;
                let gx = self
                    .vals(x)
                    .iter()
                    .enumerate()
                    .map(|(i, a)| 2.0 * g[i / d] * a)
                    .collect();
                self.acc(x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = zip_map(g, &y, |gy, s| gy * s * (1.0 - s));
                self.acc(x, gx);
            }
            Op::Ln(x) => {
                let gx = zip_map(g, self.vals(x), |gy, a| gy / a);
                self.acc(x, gx);
            }
            Op::Exp(x) => {
                let gx = zip_map(g, &y, |gy, e| gy * e);
                self.acc(x, gx);
            }
            Op::Softplus(x) => {
                let gx = zip_map(g, self.vals(x), |gy, a| gy * sigmoid(a));
                self.acc(x, gx);
            }
            Op::Tanh(x) => {
                let gx = zip_map(g, &y, |gy, t| gy * (1.0 - t * t));
                self.acc(x, gx);
            }
            Op::Scale(x, c) => {
                self.acc(x, g.iter().map(|v| v * c).collect());
            }
            Op::AddScalar(x) => {
                self.acc(x, g.to_vec());
            }
            Op::Clip { x, lo, hi } => {
                let gx = zip_map(g, self.vals(x), |gy, a| if a < lo || a > hi { 0.0 } else { gy });
                self.acc(x, gx);
            }
        }
    }

    /// Adds the gradient of every parameter leaf into its tensor in `params`.
    /// Leaves of the same parameter sum.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = node.op {
                if let Some(g) = self.grads.get(i).and_then(|g| g.as_deref()) {
                    params.get_mut(pid).accumulate_grad(g);
                }
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn sparse_mul(m: &CsrMatrix, x: &[f64], cols: usize, exec: Execution) -> Vec<f64> {
    let mut out = vec![0.0; m.rows() * cols];
    par::for_each_chunk_mut(&mut out, cols, exec, |r, row| {
        for (c, w) in m.row(r) {
            for (o, v) in row.iter_mut().zip(&x[c * cols..(c + 1) * cols]) {
                *o += w * v;
            }
        }
    });
    out
}
