//! Straight-line reference implementations used as test oracles. They work
//! on nested `Vec`s, one node at a time, and share no code with the tape.

#![allow(dead_code, clippy::needless_range_loop)]

use deform_gnn_core::deform::KernelParams;
use deform_gnn_core::model::{GraphContext, Model};
use deform_gnn_core::tensor::Tensor;

pub type Rows = Vec<Vec<f64>>;

pub fn rows(t: &Tensor) -> Rows {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x M` for a row vector `x` and a matrix stored as rows.
pub fn vec_mat(x: &[f64], m: &Rows) -> Vec<f64> {
    let cols = m[0].len();
    (0..cols).map(|j| x.iter().zip(m).map(|(xi, row)| xi * row[j]).sum()).collect()
}

pub fn relation(phi_u: &[f64], phi_v: &[f64]) -> Vec<f64> {
    let diff: Vec<f64> = phi_u.iter().zip(phi_v).map(|(a, b)| a - b).collect();
    let norm = dot(&diff, &diff).sqrt();
    if norm <= 1e-12 {
        let mut r = vec![0.0; diff.len() + 1];
        r[diff.len()] = 1.0;
        r
    } else {
        let mut r: Vec<f64> = diff.iter().map(|d| d / norm).collect();
        r.push(0.0);
        r
    }
}

/// Deformation vectors of one center from its smoothed features.
pub fn deformation(e_v: &[f64], p: &KernelParams) -> Rows {
    let w1 = rows(&p.deform_w1);
    let w2 = rows(&p.deform_w2);
    let hidden: Vec<f64> = vec_mat(e_v, &w1)
        .iter()
        .zip(p.deform_b1.data())
        .map(|(z, b)| (z + b).max(0.0))
        .collect();
    let out: Vec<f64> = vec_mat(&hidden, &w2).iter().zip(p.deform_b2.data()).map(|(z, b)| z + b).collect();
    let rel = p.kernel_vectors.cols();
    out.chunks(rel).map(<[f64]>::to_vec).collect()
}

/// `W_k` as `out x in` rows, read from the stacked-transpose layout.
pub fn transform(p: &KernelParams, k: usize) -> Rows {
    let out = p.transforms.cols();
    let inp = p.transforms.rows() / p.kernel_vectors.rows();
    (0..out)
        .map(|o| (0..inp).map(|i| p.transforms.get2(k * inp + i, o)).collect())
        .collect()
}

pub struct ConvRef {
    pub y: Rows,
    /// `weights[v][i][k]` for the `i`-th member of `v`'s neighborhood.
    pub weights: Vec<Rows>,
}

/// Literal double sum `y_v = sum_u sum_k a[u,v,k] W_k h_u` with weights
/// `exp(r . (phi_k + Delta_k)) / sum_u' exp(...)`.
pub fn direct_conv(neighbors: &[Vec<usize>], h: &Rows, phi: &Rows, e: &Rows, p: &KernelParams, deform: bool) -> ConvRef {
    let k = p.kernel_vectors.rows();
    let kv = rows(&p.kernel_vectors);
    let w: Vec<Rows> = (0..k).map(|kk| transform(p, kk)).collect();
    let out_dim = p.transforms.cols();
    let mut y = Vec::new();
    let mut weights = Vec::new();
    for (v, nbrs) in neighbors.iter().enumerate() {
        let delta = if deform { deformation(&e[v], p) } else { vec![vec![0.0; kv[0].len()]; k] };
        let mut a = vec![vec![0.0; k]; nbrs.len()];
        for kk in 0..k {
            let point: Vec<f64> = kv[kk].iter().zip(&delta[kk]).map(|(a, b)| a + b).collect();
            let scores: Vec<f64> = nbrs.iter().map(|&u| dot(&relation(&phi[u], &phi[v]), &point).exp()).collect();
            let z: f64 = scores.iter().sum();
            for (i, s) in scores.iter().enumerate() {
                a[i][kk] = s / z;
            }
        }
        let mut yv = vec![0.0; out_dim];
        for (i, &u) in nbrs.iter().enumerate() {
            for kk in 0..k {
                for (o, out) in yv.iter_mut().enumerate() {
                    *out += a[i][kk] * dot(&w[kk][o], &h[u]);
                }
            }
        }
        y.push(yv);
        weights.push(a);
    }
    ConvRef { y, weights }
}

/// Static kernel: `g(r, k) = exp(r . phi_k) / Z` with
/// `Z = sum_u' exp(r_u' . phi_k)`, accumulated per kernel as
/// `y_v = sum_k W_k sum_u g h_u`.
pub fn constant_z_conv(neighbors: &[Vec<usize>], h: &Rows, phi: &Rows, p: &KernelParams) -> Rows {
    let k = p.kernel_vectors.rows();
    let kv = rows(&p.kernel_vectors);
    let out_dim = p.transforms.cols();
    let in_dim = h[0].len();
    neighbors
        .iter()
        .enumerate()
        .map(|(v, nbrs)| {
            let mut yv = vec![0.0; out_dim];
            for kk in 0..k {
                let rel: Rows = nbrs.iter().map(|&u| relation(&phi[u], &phi[v])).collect();
                let z: f64 = rel.iter().map(|r| dot(r, &kv[kk]).exp()).sum();
                let mut agg = vec![0.0; in_dim];
                for (r, &u) in rel.iter().zip(nbrs) {
                    let g = dot(r, &kv[kk]).exp() / z;
                    for (a, x) in agg.iter_mut().zip(&h[u]) {
                        *a += g * x;
                    }
                }
                let wk = transform(p, kk);
                for (o, out) in yv.iter_mut().enumerate() {
                    *out += dot(&wk[o], &agg);
                }
            }
            yv
        })
        .collect()
}

/// Repeated closed-neighborhood averaging over the input graph.
pub fn smooth(x: &Rows, edges: &[(usize, usize)], times: usize) -> Vec<Rows> {
    let n = x.len();
    let mut adj: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut levels = vec![x.clone()];
    for _ in 0..times {
        let prev = levels.last().unwrap();
        let next = (0..n)
            .map(|v| {
                let mut acc = vec![0.0; prev[0].len()];
                for &u in &adj[v] {
                    for (a, b) in acc.iter_mut().zip(&prev[u]) {
                        *a += b;
                    }
                }
                acc.iter().map(|a| a / adj[v].len() as f64).collect()
            })
            .collect();
        levels.push(next);
    }
    levels
}

pub fn param(model: &Model, name: &str) -> Tensor {
    let i = model.params().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    model.params().get(i).value.clone()
}

pub fn kernel_params(model: &Model, level: usize) -> KernelParams {
    let p = |s: &str| param(model, &format!("conv.{level}.{s}"));
    KernelParams {
        kernel_vectors: p("kernel_vectors"),
        transforms: p("transforms"),
        deform_w1: p("deform_w1"),
        deform_b1: p("deform_b1"),
        deform_w2: p("deform_w2"),
        deform_b2: p("deform_b2"),
    }
}

pub struct ModelRef {
    pub logits: Rows,
    pub scores: Rows,
}

/// Eval-mode deformable forward pass written out node by node.
pub fn deformable_forward(model: &Model, ctx: &GraphContext, edges: &[(usize, usize)]) -> ModelRef {
    let cfg = model.config();
    let x = rows(ctx.features());
    let n = x.len();
    let enc_w = rows(&param(model, "encoder.weight"));
    let enc_b = param(model, "encoder.bias");
    let h: Rows = x
        .iter()
        .map(|xv| vec_mat(xv, &enc_w).iter().zip(enc_b.data()).map(|(a, b)| (a + b).max(0.0)).collect())
        .collect();
    let e = smooth(&x, edges, cfg.num_smoothings);
    let phi: Vec<Rows> = (0..=cfg.num_smoothings)
        .map(|l| {
            let w = rows(&param(model, &format!("positional.{l}.weight")));
            e[l].iter().map(|ev| w.iter().map(|wr| dot(wr, ev)).collect()).collect()
        })
        .collect();
    let levels = cfg.num_smoothings + 2;
    let mut ys = Vec::new();
    for (i, graph) in ctx.graphs().iter().enumerate() {
        let (p, f) = if i + 1 == levels { (&phi[cfg.num_smoothings], &e[0]) } else { (&phi[i], &e[i]) };
        let nbrs: Vec<Vec<usize>> = (0..n).map(|v| graph.neighbors(v).to_vec()).collect();
        ys.push(direct_conv(&nbrs, &h, p, f, &kernel_params(model, i), cfg.deform).y);
    }
    let z = param(model, "fusion.z");
    let cls_w = rows(&param(model, "classifier.weight"));
    let cls_b = param(model, "classifier.bias");
    let mut logits = Vec::new();
    let mut scores = Vec::new();
    for v in 0..n {
        let normed: Rows = ys
            .iter()
            .map(|y| {
                let norm = dot(&y[v], &y[v]).sqrt();
                if norm > 1e-12 { y[v].iter().map(|a| a / norm).collect() } else { y[v].clone() }
            })
            .collect();
        let ex: Vec<f64> = normed.iter().map(|y| dot(y, z.data()).exp()).collect();
        let total: f64 = ex.iter().sum();
        let s: Vec<f64> = ex.iter().map(|a| a / total).collect();
        let mut fused = vec![0.0; normed[0].len()];
        for (y, sl) in normed.iter().zip(&s) {
            for (f, a) in fused.iter_mut().zip(y) {
                *f += sl * a;
            }
        }
        logits.push(vec_mat(&fused, &cls_w).iter().zip(cls_b.data()).map(|(a, b)| a + b).collect());
        scores.push(s);
    }
    ModelRef { logits, scores }
}

pub fn max_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
