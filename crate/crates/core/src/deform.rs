//! Deformable graph convolution.
//!
//! For a center node `v` and neighbor `u`, the relation vector is the unit
//! direction from `phi_v` to `phi_u` with an extra zero coordinate, or the
//! indicator `[0, ..., 0, 1]` when both positions coincide. Each of `K`
//! kernel vectors, shifted by a per-center deformation produced by a
//! one-hidden-layer perceptron, scores every relation; a softmax over the
//! neighborhood turns the scores into weights `a[u, v, k]`, and
//!
//! ```text
//! y_v = sum_k W_k * (sum_u a[u, v, k] * h_u)
//! ```

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{glorot_uniform, unit_rows};
use crate::positional::{EdgeIndex, GraphLevel};
use crate::tensor::{Tape, Tensor, Var};

/// Positions closer than this are treated as identical.
pub const SAME_POSITION_EPS: f64 = 1e-12;

/// Dimensions of one deformable convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelShape {
    /// Number of kernel vectors `K`.
    pub num_kernels: usize,
    /// Positional dimension `d_phi`; relation vectors have `d_phi + 1`.
    pub pos_dim: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Width of the smoothed features fed to the deformation network.
    pub feature_dim: usize,
    pub deform_hidden: usize,
}

impl KernelShape {
    pub fn relation_dim(&self) -> usize {
        self.pos_dim + 1
    }
}

/// Learnable tensors of one deformable convolution.
///
/// `transforms` stacks the transposed `W_k`: rows `k*in_dim..(k+1)*in_dim`
/// hold `W_k^T`, so the layer output is one matmul of the per-kernel
/// aggregates laid side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub kernel_vectors: Tensor,
    pub transforms: Tensor,
    pub deform_w1: Tensor,
    pub deform_b1: Tensor,
    pub deform_w2: Tensor,
    pub deform_b2: Tensor,
}

impl KernelParams {
    pub fn init<R: Rng>(shape: &KernelShape, rng: &mut R) -> Self {
        let k = shape.num_kernels;
        let rel = shape.relation_dim();
        let mut transforms = Vec::with_capacity(k * shape.in_dim * shape.out_dim);
        for _ in 0..k {
            transforms.extend(glorot_uniform(shape.in_dim, shape.out_dim, rng).into_data());
        }
        Self {
            kernel_vectors: unit_rows(k, rel, rng),
            transforms: Tensor::matrix(k * shape.in_dim, shape.out_dim, transforms).expect("dims"),
            deform_w1: glorot_uniform(shape.feature_dim, shape.deform_hidden, rng),
            deform_b1: Tensor::zeros(&[shape.deform_hidden]),
            deform_w2: glorot_uniform(shape.deform_hidden, k * rel, rng),
            deform_b2: Tensor::zeros(&[k * rel]),
        }
    }

    /// `W_k` as a `out_dim x in_dim` matrix.
    pub fn transform(&self, k: usize) -> Tensor {
        let in_dim = self.transforms.rows() / self.kernel_vectors.rows();
        let out_dim = self.transforms.cols();
        let block = self.transforms.data()[k * in_dim * out_dim..(k + 1) * in_dim * out_dim].to_vec();
        Tensor::matrix(in_dim, out_dim, block).expect("dims").transpose()
    }

    pub fn attach(&self, tape: &mut Tape) -> KernelVars {
        KernelVars {
            kernel_vectors: tape.leaf(self.kernel_vectors.clone()),
            transforms: tape.leaf(self.transforms.clone()),
            deform_w1: tape.leaf(self.deform_w1.clone()),
            deform_b1: tape.leaf(self.deform_b1.clone()),
            deform_w2: tape.leaf(self.deform_w2.clone()),
            deform_b2: tape.leaf(self.deform_b2.clone()),
        }
    }
}

/// Tape handles for a [`KernelParams`].
#[derive(Clone, Copy, Debug)]
pub struct KernelVars {
    pub kernel_vectors: Var,
    pub transforms: Var,
    pub deform_w1: Var,
    pub deform_b1: Var,
    pub deform_w2: Var,
    pub deform_b2: Var,
}

/// Relation vector from center position `phi_v` to neighbor `phi_u`.
pub fn relation_vector(phi_u: &[f64], phi_v: &[f64]) -> Vec<f64> {
    let diff: Vec<f64> = phi_u.iter().zip(phi_v).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let mut out = vec![0.0; diff.len() + 1];
    if norm > SAME_POSITION_EPS {
        for (o, d) in out.iter_mut().zip(&diff) {
            *o = d / norm;
        }
    } else {
        out[diff.len()] = 1.0;
    }
    out
}

/// Deformation vectors `Delta_1..Delta_K` for one center node's smoothed
/// features.
pub fn deformation(e_v: &[f64], params: &KernelParams) -> Result<Vec<Vec<f64>>> {
    let (d_x, hidden) = (params.deform_w1.rows(), params.deform_w1.cols());
    if e_v.len() != d_x {
        return Err(Error::Shape(format!("deformation input has {} features, expected {d_x}", e_v.len())));
    }
    let h: Vec<f64> = (0..hidden)
        .map(|j| {
            let z = params.deform_b1.data()[j] + (0..d_x).map(|i| e_v[i] * params.deform_w1.get2(i, j)).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    let out_dim = params.deform_w2.cols();
    let flat: Vec<f64> = (0..out_dim)
        .map(|j| params.deform_b2.data()[j] + (0..hidden).map(|i| h[i] * params.deform_w2.get2(i, j)).sum::<f64>())
        .collect();
    let rel = params.kernel_vectors.cols();
    Ok(flat.chunks(rel).map(<[f64]>::to_vec).collect())
}

/// Softmax-normalized kernel weights over one neighborhood:
/// `result[i][k]` is the weight of neighbor `i` for kernel `k`.
pub fn kernel_weights(relations: &[Vec<f64>], deformations: &[Vec<f64>], kernel_vectors: &Tensor) -> Result<Vec<Vec<f64>>> {
    if relations.is_empty() {
        return Err(Error::InvalidArgument("empty neighborhood".into()));
    }
    let k = kernel_vectors.rows();
    let mut weights = vec![vec![0.0; k]; relations.len()];
    for kk in 0..k {
        let point: Vec<f64> = kernel_vectors
            .row(kk)
            .iter()
            .zip(&deformations[kk])
            .map(|(a, b)| a + b)
            .collect();
        let logits: Vec<f64> = relations
            .iter()
            .map(|r| r.iter().zip(&point).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (w, l) in weights.iter_mut().zip(&logits) {
            w[kk] = (l - max).exp() / total;
        }
    }
    Ok(weights)
}

/// Tape outputs of one deformable convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvOutput {
    /// `n x out_dim` convolution result.
    pub y: Var,
    /// `E x K` kernel weights, one row per (center, neighbor) entry.
    pub attention: Var,
    /// `n x K*(d_phi+1)` deformation vectors; absent when deformation is
    /// disabled.
    pub deformation: Option<Var>,
}

/// Relation vectors for every entry of `edges`, as a tape value. Rows whose
/// positions coincide become the constant indicator row.
pub fn relation_vectors(tape: &mut Tape, edges: &EdgeIndex, phi: Var) -> Result<Var> {
    let pu = tape.gather_rows(phi, edges.neighbors.clone())?;
    let pv = tape.gather_rows(phi, edges.centers.clone())?;
    let diff = tape.sub(pu, pv)?;
    let d = tape.value(diff);
    let same: Vec<bool> = (0..d.rows())
        .map(|r| d.row(r).iter().map(|x| x * x).sum::<f64>().sqrt() <= SAME_POSITION_EPS)
        .collect();
    let normalized = tape.row_l2_normalize(diff)?;
    let keep = tape.constant(Tensor::vector(same.iter().map(|&s| if s { 0.0 } else { 1.0 }).collect()));
    let masked = tape.mul_col(normalized, keep)?;
    let indicator = Tensor::matrix(same.len(), 1, same.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect())?;
    let indicator = tape.constant(indicator);
    tape.concat(&[masked, indicator])
}

/// Deformable convolution over one neighborhood graph.
///
/// `h` is `n x in_dim`, `phi` is `n x d_phi`, `e` holds the smoothed
/// features fed to the deformation network. With `deform == false` the
/// deformation vectors are fixed at zero and the perceptron is skipped.
#[allow(clippy::too_many_arguments)]
pub fn deform_gconv(
    tape: &mut Tape,
    edges: &EdgeIndex,
    h: Var,
    phi: Var,
    e: Var,
    params: &KernelVars,
    shape: &KernelShape,
    deform: bool,
) -> Result<ConvOutput> {
    let n = edges.num_nodes;
    for (name, v, cols) in [("h", h, shape.in_dim), ("phi", phi, shape.pos_dim), ("e", e, shape.feature_dim)] {
        let t = tape.value(v);
        if t.shape() != [n, cols] {
            return Err(Error::Shape(format!("{name} is {:?}, expected [{n}, {cols}]", t.shape())));
        }
    }
    if edges.offsets.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("empty neighborhood".into()));
    }

    let r = relation_vectors(tape, edges, phi)?;
    let (logits, deformation) = if deform {
        let z = tape.matmul(e, params.deform_w1)?;
        let z = tape.add_row(z, params.deform_b1)?;
        let hidden = tape.relu(z)?;
        let delta = tape.matmul(hidden, params.deform_w2)?;
        let delta = tape.add_row(delta, params.deform_b2)?;
        let points = tape.add_row(delta, params.kernel_vectors)?;
        (tape.edge_scores(r, points, edges.centers.clone())?, Some(delta))
    } else {
        let kt = tape.transpose(params.kernel_vectors)?;
        (tape.matmul(r, kt)?, None)
    };
    let attention = tape.softmax_groups(logits, edges.offsets.clone())?;
    debug_assert!(
        group_sum_error(tape.value(attention), &edges.offsets) < 1e-9,
        "kernel weights do not sum to one"
    );

    let stacked = tape.edge_aggregate(attention, h, edges.centers.clone(), edges.neighbors.clone(), n)?;
    let y = tape.matmul(stacked, params.transforms)?;
    Ok(ConvOutput {
        y,
        attention,
        deformation,
    })
}

/// Largest deviation from one of any column sum within a row group.
pub fn group_sum_error(t: &Tensor, offsets: &[usize]) -> f64 {
    let cols = t.cols();
    let mut worst: f64 = 0.0;
    for w in offsets.windows(2) {
        for c in 0..cols {
            let total: f64 = (w[0]..w[1]).map(|r| t.row(r)[c]).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    worst
}

/// Kernel weights of one convolution, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvDiagnostics {
    pub level: GraphLevel,
    pub centers: Arc<[usize]>,
    pub neighbors: Arc<[usize]>,
    pub offsets: Arc<[usize]>,
    /// `E x K` weights aligned with `centers`/`neighbors`.
    pub weights: Tensor,
}

impl ConvDiagnostics {
    pub fn new(level: GraphLevel, edges: &EdgeIndex, weights: Tensor) -> Self {
        Self {
            level,
            centers: edges.centers.clone(),
            neighbors: edges.neighbors.clone(),
            offsets: edges.offsets.clone(),
            weights,
        }
    }

    pub fn num_kernels(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `(neighbor, weights per kernel)` for every member of `v`'s
    /// neighborhood.
    pub fn neighborhood(&self, v: usize) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        (self.offsets[v]..self.offsets[v + 1]).map(move |i| (self.neighbors[i], self.weights.row(i)))
    }

    /// Largest deviation of any per-(center, kernel) weight sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        group_sum_error(&self.weights, &self.offsets)
    }

    /// CSV rows `level,v,u,k,a_hat` (no header).
    pub fn write_csv_rows(&self, out: &mut String) {
        for (i, (&v, &u)) in self.centers.iter().zip(self.neighbors.iter()).enumerate() {
            for (kk, a) in self.weights.row(i).iter().enumerate() {
                let _ = writeln!(out, "{},{v},{u},{kk},{a}", self.level);
            }
        }
    }
}

pub const DIAGNOSTICS_CSV_HEADER: &str = "level,v,u,k,a_hat";
