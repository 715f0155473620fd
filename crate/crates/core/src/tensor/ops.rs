use std::sync::Arc;

use super::tape::Var;
use super::{gemm, Tensor, NORM_EPS};

/// Kinds of recorded operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    ScalarMul,
    ElementwiseMul,
    ConcatLastAxis,
    Relu,
    RowL2Normalize,
    SoftmaxOverGroup,
    Exp,
    Log,
    Sum,
    Mean,
    Dropout,
    GatherRows,
    ScatterAddRows,
    CrossEntropyWithLogits,
    SquaredL2Norm,
    Transpose,
    AddRowBroadcast,
    SliceCols,
    MulColBroadcast,
    EdgeAggregate,
    EdgeScores,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::ScalarMul => "scalar-mul",
            OpKind::ElementwiseMul => "elementwise-mul",
            OpKind::ConcatLastAxis => "concat-last-axis",
            OpKind::Relu => "relu",
            OpKind::RowL2Normalize => "row-l2-normalize",
            OpKind::SoftmaxOverGroup => "softmax-over-group",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Dropout => "dropout",
            OpKind::GatherRows => "gather-rows",
            OpKind::ScatterAddRows => "scatter-add-rows",
            OpKind::CrossEntropyWithLogits => "cross-entropy-with-logits",
            OpKind::SquaredL2Norm => "squared-l2-norm",
            OpKind::Transpose => "transpose",
            OpKind::AddRowBroadcast => "add-row-broadcast",
            OpKind::SliceCols => "slice-cols",
            OpKind::MulColBroadcast => "mul-col-broadcast",
            OpKind::EdgeAggregate => "edge-aggregate",
            OpKind::EdgeScores => "edge-scores",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        ALL_KINDS.iter().copied().find(|k| k.name() == name)
    }
}

pub(crate) const ALL_KINDS: [OpKind; 25] = [
    OpKind::Leaf,
    OpKind::MatMul,
    OpKind::Add,
    OpKind::Sub,
    OpKind::ScalarMul,
    OpKind::ElementwiseMul,
    OpKind::ConcatLastAxis,
    OpKind::Relu,
    OpKind::RowL2Normalize,
    OpKind::SoftmaxOverGroup,
    OpKind::Exp,
    OpKind::Log,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::Dropout,
    OpKind::GatherRows,
    OpKind::ScatterAddRows,
    OpKind::CrossEntropyWithLogits,
    OpKind::SquaredL2Norm,
    OpKind::Transpose,
    OpKind::AddRowBroadcast,
    OpKind::SliceCols,
    OpKind::MulColBroadcast,
    OpKind::EdgeAggregate,
    OpKind::EdgeScores,
];

/// A recorded operation with its inputs and whatever the adjoint needs
/// beyond the input and output values.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    ScalarMul(Var, f64),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Relu(Var),
    RowL2Normalize(Var),
    SoftmaxGroups(Var, Arc<[usize]>),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Dropout(Var, Arc<[f64]>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    CrossEntropy(Var, Arc<[usize]>),
    SquaredL2Norm(Var),
    Transpose(Var),
    AddRowBroadcast(Var, Var),
    SliceCols(Var, usize, usize),
    MulColBroadcast(Var, Var),
    EdgeAggregate(Var, Var, Arc<EdgeList>),
    EdgeScores(Var, Var, Arc<[usize]>),
}

/// Directed (center, neighbor) pairs shared by edge ops.
#[derive(Debug)]
pub(crate) struct EdgeList {
    pub centers: Arc<[usize]>,
    pub neighbors: Arc<[usize]>,
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::ScalarMul(..) => OpKind::ScalarMul,
            Op::Mul(..) => OpKind::ElementwiseMul,
            Op::Concat(..) => OpKind::ConcatLastAxis,
            Op::Relu(..) => OpKind::Relu,
            Op::RowL2Normalize(..) => OpKind::RowL2Normalize,
            Op::SoftmaxGroups(..) => OpKind::SoftmaxOverGroup,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Dropout(..) => OpKind::Dropout,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::ScatterAddRows(..) => OpKind::ScatterAddRows,
            Op::CrossEntropy(..) => OpKind::CrossEntropyWithLogits,
            Op::SquaredL2Norm(..) => OpKind::SquaredL2Norm,
            Op::Transpose(..) => OpKind::Transpose,
            Op::AddRowBroadcast(..) => OpKind::AddRowBroadcast,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::MulColBroadcast(..) => OpKind::MulColBroadcast,
            Op::EdgeAggregate(..) => OpKind::EdgeAggregate,
            Op::EdgeScores(..) => OpKind::EdgeScores,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::MulColBroadcast(a, b)
            | Op::EdgeAggregate(a, b, _)
            | Op::EdgeScores(a, b, _) => vec![*a, *b],
            Op::Concat(xs) => xs.clone(),
            Op::ScalarMul(x, _)
            | Op::Relu(x)
            | Op::RowL2Normalize(x)
            | Op::SoftmaxGroups(x, _)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Dropout(x, _)
            | Op::GatherRows(x, _)
            | Op::ScatterAddRows(x, _)
            | Op::CrossEntropy(x, _)
            | Op::SquaredL2Norm(x)
            | Op::Transpose(x)
            | Op::SliceCols(x, _, _) => vec![*x],
        }
    }
}

/// Row count and column count of a 2-D view where a 1-D tensor is one row.
pub(crate) fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// Row count and column count of a 2-D view where a 1-D tensor is one
/// column. Used by the grouped softmax, which normalizes down rows.
pub(crate) fn column_dims(t: &Tensor) -> (usize, usize) {
    if t.shape().len() == 1 {
        (t.numel(), 1)
    } else {
        let r = t.shape()[0];
        (r, t.numel() / r)
    }
}

pub(crate) fn softmax_groups_forward(x: &[f64], cols: usize, offsets: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for w in offsets.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for c in 0..cols {
            let max = (lo..hi)
                .map(|r| x[r * cols + c])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for r in lo..hi {
                let e = (x[r * cols + c] - max).exp();
                out[r * cols + c] = e;
                total += e;
            }
            for r in lo..hi {
                out[r * cols + c] /= total;
            }
        }
    }
    out
}

pub(crate) fn row_l2_normalize_forward(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(cols) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > NORM_EPS {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Mean softmax cross-entropy over rows, with per-row softmax probabilities.
pub(crate) fn cross_entropy_forward(logits: &[f64], cols: usize, targets: &[usize]) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, (row, &t)) in logits.chunks(cols).zip(targets).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        for (c, v) in row.iter().enumerate() {
            probs[r * cols + c] = (v - lse).exp();
        }
    }
    (loss / targets.len() as f64, probs)
}

/// Inputs' values as seen by the adjoint of one node.
pub(crate) struct Ctx<'a, 'g> {
    pub value: &'g dyn Fn(Var) -> &'a Tensor,
    pub out: &'a Tensor,
    pub grad: &'g [f64],
    /// Whether an input needs its adjoint; others may be skipped.
    pub needs: &'g dyn Fn(Var) -> bool,
}

/// Accumulates adjoint contributions for one recorded op.
///
/// `emit(input, contribution)` adds `contribution` to the gradient of
/// `input`. Inputs that do not require gradients are filtered by the
/// caller.
pub(crate) fn backprop(op: &Op, ctx: &Ctx<'_, '_>, emit: &mut dyn FnMut(Var, Vec<f64>)) {
    let g = ctx.grad;
    let val = ctx.value;
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = dims(av);
            let n = bv.cols();
            if (ctx.needs)(*a) {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, bv.data(), true, &mut ga, false);
                emit(*a, ga);
            }
            if (ctx.needs)(*b) {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g, false, &mut gb, false);
                emit(*b, gb);
            }
        }
        Op::Add(a, b) => {
            emit(*a, g.to_vec());
            emit(*b, g.to_vec());
        }
        Op::Sub(a, b) => {
            emit(*a, g.to_vec());
            emit(*b, g.iter().map(|v| -v).collect());
        }
        Op::ScalarMul(x, c) => emit(*x, g.iter().map(|v| v * c).collect()),
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            emit(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
            emit(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
        }
        Op::Concat(xs) => {
            let rows = ctx.out.rows();
            let total = ctx.out.cols();
            let mut offset = 0;
            for x in xs {
                let w = val(*x).cols();
                let mut gx = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    gx.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                }
                emit(*x, gx);
                offset += w;
            }
        }
        Op::Relu(x) => {
            let xv = val(*x).data();
            emit(
                *x,
                g.iter()
                    .zip(xv)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
            );
        }
        Op::RowL2Normalize(x) => {
            let xv = val(*x);
            let cols = xv.cols();
            let y = ctx.out.data();
            let mut gx = vec![0.0; g.len()];
            for r in 0..xv.rows() {
                let span = r * cols..(r + 1) * cols;
                let xr = &xv.data()[span.clone()];
                let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > NORM_EPS {
                    // d(x/|x|) = (g - y (y.g)) / |x|
                    let yr = &y[span.clone()];
                    let gr = &g[span.clone()];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, out) in gx[span].iter_mut().enumerate() {
                        *out = (gr[j] - yr[j] * dot) / norm;
                    }
                } else {
                    gx[span.clone()].copy_from_slice(&g[span]);
                }
            }
            emit(*x, gx);
        }
        Op::SoftmaxGroups(x, offsets) => {
            let (_, cols) = column_dims(val(*x));
            let y = ctx.out.data();
            let mut gx = vec![0.0; g.len()];
            for w in offsets.windows(2) {
                for c in 0..cols {
                    let dot: f64 = (w[0]..w[1])
                        .map(|r| y[r * cols + c] * g[r * cols + c])
                        .sum();
                    for r in w[0]..w[1] {
                        let i = r * cols + c;
                        gx[i] = y[i] * (g[i] - dot);
                    }
                }
            }
            emit(*x, gx);
        }
        Op::Exp(x) => emit(*x, g.iter().zip(ctx.out.data()).map(|(g, y)| g * y).collect()),
        Op::Log(x) => emit(*x, g.iter().zip(val(*x).data()).map(|(g, x)| g / x).collect()),
        Op::Sum(x) => emit(*x, vec![g[0]; val(*x).numel()]),
        Op::Mean(x) => {
            let n = val(*x).numel();
            emit(*x, vec![g[0] / n as f64; n]);
        }
        Op::Dropout(x, scale) => emit(*x, g.iter().zip(scale.iter()).map(|(g, s)| g * s).collect()),
        Op::GatherRows(x, idx) => {
            let xv = val(*x);
            let cols = xv.cols();
            let mut gx = vec![0.0; xv.numel()];
            for (r, &src) in idx.iter().enumerate() {
                let dst = &mut gx[src * cols..(src + 1) * cols];
                for (d, v) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                    *d += v;
                }
            }
            emit(*x, gx);
        }
        Op::ScatterAddRows(x, idx) => {
            let cols = ctx.out.cols();
            let mut gx = Vec::with_capacity(idx.len() * cols);
            for &dst in idx.iter() {
                gx.extend_from_slice(&g[dst * cols..(dst + 1) * cols]);
            }
            emit(*x, gx);
        }
        Op::CrossEntropy(x, targets) => {
            let xv = val(*x);
            let cols = xv.cols();
            let (_, mut probs) = cross_entropy_forward(xv.data(), cols, targets);
            let scale = g[0] / targets.len() as f64;
            for (r, &t) in targets.iter().enumerate() {
                probs[r * cols + t] -= 1.0;
            }
            probs.iter_mut().for_each(|p| *p *= scale);
            emit(*x, probs);
        }
        Op::SquaredL2Norm(x) => emit(*x, val(*x).data().iter().map(|v| 2.0 * v * g[0]).collect()),
        Op::Transpose(x) => {
            let (r, c) = dims(ctx.out);
            let gt = Tensor::new(vec![r, c], g.to_vec()).expect("grad shape");
            emit(*x, gt.transpose().into_data());
        }
        Op::AddRowBroadcast(x, b) => {
            let cols = ctx.out.cols();
            let mut gb = vec![0.0; cols];
            for row in g.chunks(cols) {
                for (d, v) in gb.iter_mut().zip(row) {
                    *d += v;
                }
            }
            emit(*x, g.to_vec());
            emit(*b, gb);
        }
        Op::SliceCols(x, start, end) => {
            let xv = val(*x);
            let (rows, cols) = dims(xv);
            let w = end - start;
            let mut gx = vec![0.0; rows * cols];
            for r in 0..rows {
                gx[r * cols + start..r * cols + end].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            emit(*x, gx);
        }
        Op::MulColBroadcast(x, w) => {
            let (xv, wv) = (val(*x), val(*w).data());
            let cols = xv.cols();
            let mut gx = vec![0.0; g.len()];
            let mut gw = vec![0.0; wv.len()];
            for (r, (grow, xrow)) in g.chunks(cols).zip(xv.data().chunks(cols)).enumerate() {
                let mut acc = 0.0;
                for j in 0..cols {
                    gx[r * cols + j] = grow[j] * wv[r];
                    acc += grow[j] * xrow[j];
                }
                gw[r] = acc;
            }
            emit(*x, gx);
            emit(*w, gw);
        }
        Op::EdgeAggregate(w, h, edges) => {
            let (wv, hv) = (val(*w), val(*h));
            let k = wv.cols();
            let d = hv.cols();
            let width = k * d;
            if (ctx.needs)(*w) {
                let mut gw = vec![0.0; wv.numel()];
                for (e, (&c, &u)) in edges.centers.iter().zip(edges.neighbors.iter()).enumerate() {
                    let hu = hv.row(u);
                    let grow = &g[c * width..(c + 1) * width];
                    for kk in 0..k {
                        gw[e * k + kk] = dot(&grow[kk * d..(kk + 1) * d], hu);
                    }
                }
                emit(*w, gw);
            }
            if (ctx.needs)(*h) {
                let mut gh = vec![0.0; hv.numel()];
                for (e, (&c, &u)) in edges.centers.iter().zip(edges.neighbors.iter()).enumerate() {
                    let grow = &g[c * width..(c + 1) * width];
                    let dst = &mut gh[u * d..(u + 1) * d];
                    for (kk, &a) in wv.row(e).iter().enumerate() {
                        axpy(a, &grow[kk * d..(kk + 1) * d], dst);
                    }
                }
                emit(*h, gh);
            }
        }
        Op::EdgeScores(r, p, centers) => {
            let (rv, pv) = (val(*r), val(*p));
            let m = rv.cols();
            let k = ctx.out.cols();
            if (ctx.needs)(*r) {
                let mut gr = vec![0.0; rv.numel()];
                for (e, &c) in centers.iter().enumerate() {
                    let prow = pv.row(c);
                    let dst = &mut gr[e * m..(e + 1) * m];
                    for kk in 0..k {
                        axpy(g[e * k + kk], &prow[kk * m..(kk + 1) * m], dst);
                    }
                }
                emit(*r, gr);
            }
            if (ctx.needs)(*p) {
                let mut gp = vec![0.0; pv.numel()];
                for (e, &c) in centers.iter().enumerate() {
                    let rrow = rv.row(e);
                    let dst = &mut gp[c * k * m..(c + 1) * k * m];
                    for kk in 0..k {
                        axpy(g[e * k + kk], rrow, &mut dst[kk * m..(kk + 1) * m]);
                    }
                }
                emit(*p, gp);
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`.
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (d, v) in y.iter_mut().zip(x) {
        *d += a * v;
    }
}
