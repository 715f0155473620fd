use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops::{self, backprop, column_dims, dims, Ctx, Op, OpKind};
use super::{gemm, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation. Nodes are stored in creation
/// order, so every op's inputs precede it.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node that requires one.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` does not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupts the adjoint of one op kind. Only meant for negative
    /// controls of the gradient checker.
    #[doc(hidden)]
    pub fn inject_adjoint_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    /// Registers a tracked leaf (a parameter or an input to differentiate).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers an untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("var belongs to this tape");
        &self.nodes[v.idx].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    /// Kind of op that produced `v`.
    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.idx].op.kind()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(())
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let kind = op.kind();
        let inputs = op.inputs();
        for v in &inputs {
            self.check(*v)?;
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(kind.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.idx].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn val(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.idx].value)
    }

    fn mismatch(kind: OpKind, detail: String) -> Error {
        Error::Shape(format!("{}: {detail}", kind.name()))
    }

    fn require_2d(&self, kind: OpKind, v: Var) -> Result<(usize, usize)> {
        let t = self.val(v)?;
        if t.shape().len() != 2 {
            return Err(Self::mismatch(kind, format!("expected a matrix, got {:?}", t.shape())));
        }
        Ok(dims(t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_2d(OpKind::MatMul, a)?;
        let (k2, n) = self.require_2d(OpKind::MatMul, b)?;
        if k != k2 {
            return Err(Self::mismatch(OpKind::MatMul, format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.val(a)?.data(), false, self.val(b)?.data(), false, &mut out, false);
        self.push(Op::MatMul(a, b), vec![m, n], out)
    }

    fn zip_same(&mut self, kind: OpKind, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
        let (av, bv) = (self.val(a)?, self.val(b)?);
        if av.shape() != bv.shape() {
            return Err(Self::mismatch(kind, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.zip_same(OpKind::Add, a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), shape, data)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.zip_same(OpKind::Sub, a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), shape, data)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.zip_same(OpKind::ElementwiseMul, a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), shape, data)
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.val(x)?;
        let (shape, data) = (xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect());
        self.push(Op::ScalarMul(x, c), shape, data)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = self.val(x)?;
        let (shape, data) = (xv.shape().to_vec(), xv.data().iter().map(|v| f(*v)).collect());
        self.push(op, shape, data)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Log(x), f64::ln)
    }

    /// Concatenates matrices (or 1-D rows) along the last axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Self::mismatch(OpKind::ConcatLastAxis, "no inputs".into()))?;
        let rows = self.val(first)?.rows();
        let ndim = self.val(first)?.shape().len();
        let mut widths = Vec::with_capacity(xs.len());
        for x in xs {
            let t = self.val(*x)?;
            if t.rows() != rows || t.shape().len() != ndim || ndim > 2 {
                return Err(Self::mismatch(OpKind::ConcatLastAxis, format!("incompatible input {:?}", t.shape())));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for x in xs {
                out.extend_from_slice(self.nodes[x.idx].value.row(r));
            }
        }
        let shape = if ndim == 1 { vec![total] } else { vec![rows, total] };
        self.push(Op::Concat(xs.to_vec()), shape, out)
    }

    /// Scales each row to unit l2 norm. Rows with norm at or below
    /// [`super::NORM_EPS`] pass through unchanged.
    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x)?;
        let data = ops::row_l2_normalize_forward(xv.data(), xv.cols());
        let shape = xv.shape().to_vec();
        self.push(Op::RowL2Normalize(x), shape, data)
    }

    /// Softmax down the rows of each contiguous row group, independently
    /// per column. `offsets` holds group boundaries: group `g` spans rows
    /// `offsets[g]..offsets[g + 1]`. A 1-D input is a single column.
    pub fn softmax_groups(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let xv = self.val(x)?;
        let (rows, cols) = column_dims(xv);
        let valid = offsets.first() == Some(&0)
            && offsets.last() == Some(&rows)
            && offsets.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Self::mismatch(
                OpKind::SoftmaxOverGroup,
                format!("group offsets do not partition {rows} rows into non-empty groups"),
            ));
        }
        let data = ops::softmax_groups_forward(xv.data(), cols, &offsets);
        let shape = xv.shape().to_vec();
        self.push(Op::SoftmaxGroups(x, offsets), shape, data)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x)?.data().iter().sum();
        self.push(Op::Sum(x), vec![1], vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x)?;
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        self.push(Op::Mean(x), vec![1], vec![s])
    }

    pub fn squared_l2_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x)?.data().iter().map(|v| v * v).sum();
        self.push(Op::SquaredL2Norm(x), vec![1], vec![s])
    }

    /// Inverted dropout with a caller-supplied keep mask: kept entries are
    /// scaled by `1 / (1 - rate)`, dropped ones zeroed.
    pub fn dropout(&mut self, x: Var, keep: &[bool], rate: f64) -> Result<Var> {
        let xv = self.val(x)?;
        if keep.len() != xv.numel() || !(0.0..1.0).contains(&rate) {
            return Err(Self::mismatch(
                OpKind::Dropout,
                format!("mask of {} for {} values at rate {rate}", keep.len(), xv.numel()),
            ));
        }
        let inv = 1.0 / (1.0 - rate);
        let scale: Arc<[f64]> = keep.iter().map(|&k| if k { inv } else { 0.0 }).collect();
        let data = xv.data().iter().zip(scale.iter()).map(|(v, s)| v * s).collect();
        let shape = xv.shape().to_vec();
        self.push(Op::Dropout(x, scale), shape, data)
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (rows, cols) = self.require_2d(OpKind::GatherRows, x)?;
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Self::mismatch(OpKind::GatherRows, format!("row {bad} out of {rows}")));
        }
        if idx.is_empty() {
            return Err(Self::mismatch(OpKind::GatherRows, "empty index".into()));
        }
        let xv = &self.nodes[x.idx].value;
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            out.extend_from_slice(xv.row(i));
        }
        self.push(Op::GatherRows(x, idx.clone()), vec![idx.len(), cols], out)
    }

    /// `out[idx[r]] += x[r]` into a zero matrix with `out_rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<[usize]>, out_rows: usize) -> Result<Var> {
        let (rows, cols) = self.require_2d(OpKind::ScatterAddRows, x)?;
        if idx.len() != rows || idx.iter().any(|&i| i >= out_rows) || out_rows == 0 {
            return Err(Self::mismatch(
                OpKind::ScatterAddRows,
                format!("{} targets for {rows} rows into {out_rows}", idx.len()),
            ));
        }
        let xv = &self.nodes[x.idx].value;
        let mut out = vec![0.0; out_rows * cols];
        for (r, &dst) in idx.iter().enumerate() {
            for (o, v) in out[dst * cols..(dst + 1) * cols].iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        self.push(Op::ScatterAddRows(x, idx), vec![out_rows, cols], out)
    }

    /// Mean softmax cross-entropy of `logits` rows against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Arc<[usize]>) -> Result<Var> {
        let xv = self.val(logits)?;
        let (rows, cols) = dims(xv);
        if targets.len() != rows || targets.iter().any(|&t| t >= cols) {
            return Err(Self::mismatch(
                OpKind::CrossEntropyWithLogits,
                format!("{} targets for logits {:?}", targets.len(), xv.shape()),
            ));
        }
        let (loss, _) = ops::cross_entropy_forward(xv.data(), cols, &targets);
        self.push(Op::CrossEntropy(logits, targets), vec![1], vec![loss])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.require_2d(OpKind::Transpose, x)?;
        let t = self.nodes[x.idx].value.transpose();
        let shape = t.shape().to_vec();
        self.push(Op::Transpose(x), shape, t.into_data())
    }

    /// Adds a row vector `b` (shape `[n]` or `[1, n]`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.require_2d(OpKind::AddRowBroadcast, x)?;
        let bv = self.val(b)?;
        if bv.numel() != cols {
            return Err(Self::mismatch(OpKind::AddRowBroadcast, format!("bias {:?} for {cols} columns", bv.shape())));
        }
        let xv = &self.nodes[x.idx].value;
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(cols) {
            for (o, v) in row.iter_mut().zip(bv.data()) {
                *o += v;
            }
        }
        self.push(Op::AddRowBroadcast(x, b), vec![rows, cols], out)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.require_2d(OpKind::SliceCols, x)?;
        if start >= end || end > cols {
            return Err(Self::mismatch(OpKind::SliceCols, format!("{start}..{end} of {cols}")));
        }
        let xv = &self.nodes[x.idx].value;
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..end]);
        }
        self.push(Op::SliceCols(x, start, end), vec![rows, end - start], out)
    }

    /// Scales row `i` of `x` by `w[i]`; `w` has one entry per row.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (rows, cols) = self.require_2d(OpKind::MulColBroadcast, x)?;
        let wv = self.val(w)?;
        if wv.numel() != rows {
            return Err(Self::mismatch(OpKind::MulColBroadcast, format!("{} weights for {rows} rows", wv.numel())));
        }
        let xv = &self.nodes[x.idx].value;
        let mut out = xv.data().to_vec();
        for (row, s) in out.chunks_mut(cols).zip(wv.data()) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        self.push(Op::MulColBroadcast(x, w), vec![rows, cols], out)
    }

    /// Weighted neighbor aggregation. `w` is `E x K`, `h` is `n x d`; the
    /// result is `out_rows x K*d` with
    /// `out[centers[e], k*d..(k+1)*d] += w[e, k] * h[neighbors[e]]`.
    pub fn edge_aggregate(
        &mut self,
        w: Var,
        h: Var,
        centers: Arc<[usize]>,
        neighbors: Arc<[usize]>,
        out_rows: usize,
    ) -> Result<Var> {
        let (e, k) = self.require_2d(OpKind::EdgeAggregate, w)?;
        let (n, d) = self.require_2d(OpKind::EdgeAggregate, h)?;
        if centers.len() != e || neighbors.len() != e {
            return Err(Self::mismatch(
                OpKind::EdgeAggregate,
                format!("{e} weight rows for {} centers and {} neighbors", centers.len(), neighbors.len()),
            ));
        }
        if let Some(bad) = neighbors.iter().find(|&&u| u >= n) {
            return Err(Self::mismatch(OpKind::EdgeAggregate, format!("neighbor {bad} out of {n}")));
        }
        if let Some(bad) = centers.iter().find(|&&c| c >= out_rows) {
            return Err(Self::mismatch(OpKind::EdgeAggregate, format!("center {bad} out of {out_rows}")));
        }
        let (wv, hv) = (&self.nodes[w.idx].value, &self.nodes[h.idx].value);
        let width = k * d;
        let mut out = vec![0.0; out_rows * width];
        for (i, (&c, &u)) in centers.iter().zip(neighbors.iter()).enumerate() {
            let hu = hv.row(u);
            let dst = &mut out[c * width..(c + 1) * width];
            for (kk, &a) in wv.row(i).iter().enumerate() {
                ops::axpy(a, hu, &mut dst[kk * d..(kk + 1) * d]);
            }
        }
        let edges = Arc::new(ops::EdgeList { centers, neighbors });
        self.push(Op::EdgeAggregate(w, h, edges), vec![out_rows, width], out)
    }

    /// Per-entry kernel scores. `r` is `E x m`, `p` is `n x K*m`; the
    /// result is `E x K` with `out[e, k] = r[e] . p[centers[e], k*m..(k+1)*m]`.
    pub fn edge_scores(&mut self, r: Var, p: Var, centers: Arc<[usize]>) -> Result<Var> {
        let (e, m) = self.require_2d(OpKind::EdgeScores, r)?;
        let (n, width) = self.require_2d(OpKind::EdgeScores, p)?;
        if width % m != 0 || centers.len() != e {
            return Err(Self::mismatch(
                OpKind::EdgeScores,
                format!("relations [{e}x{m}], points [{n}x{width}], {} centers", centers.len()),
            ));
        }
        if let Some(bad) = centers.iter().find(|&&c| c >= n) {
            return Err(Self::mismatch(OpKind::EdgeScores, format!("center {bad} out of {n}")));
        }
        let k = width / m;
        let (rv, pv) = (&self.nodes[r.idx].value, &self.nodes[p.idx].value);
        let mut out = Vec::with_capacity(e * k);
        for (i, &c) in centers.iter().enumerate() {
            let (rrow, prow) = (rv.row(i), pv.row(c));
            out.extend(prow.chunks(m).map(|block| ops::dot(rrow, block)));
        }
        self.push(Op::EdgeScores(r, p, centers), vec![e, k], out)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if !self.nodes[loss.idx].value.is_scalar() {
            return Err(Error::NotScalar(self.nodes[loss.idx].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(vec![1.0]);
        let value = |v: Var| -> &Tensor { &self.nodes[v.idx].value };
        for i in (0..=loss.idx).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let faulty = self.fault == Some(node.op.kind());
            let needs = |v: Var| self.nodes[v.idx].requires_grad;
            let ctx = Ctx {
                value: &value,
                out: &node.value,
                grad: &g,
                needs: &needs,
            };
            backprop(&node.op, &ctx, &mut |input, mut contrib| {
                let target = &self.nodes[input.idx];
                if !target.requires_grad {
                    return;
                }
                if faulty {
                    contrib.iter_mut().for_each(|v| *v *= 1.5);
                }
                match &mut grads[input.idx] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            });
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor::new(self.nodes[i].value.shape().to_vec(), data).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { tape: self.id, grads })
    }
}
