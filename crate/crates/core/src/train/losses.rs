use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Rows `e_k2 - e_k1` for every ordered pair `k1 != k2`.
fn pair_difference_matrix(k: usize) -> Tensor {
    let pairs = k * (k - 1);
    let mut d = Tensor::zeros(&[pairs, k]);
    let mut row = 0;
    for k1 in 0..k {
        for k2 in 0..k {
            if k1 != k2 {
                d.data_mut()[row * k + k2] += 1.0;
                d.data_mut()[row * k + k1] -= 1.0;
                row += 1;
            }
        }
    }
    d
}

fn average(tape: &mut Tape, terms: Vec<Var>) -> Result<Var> {
    let n = terms.len();
    let mut acc = match terms.first() {
        Some(&t) => t,
        None => return Ok(tape.constant(Tensor::scalar(0.0))),
    };
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    if n == 1 {
        Ok(acc)
    } else {
        tape.scalar_mul(acc, 1.0 / n as f64)
    }
}

/// Separating regularizer: for each `K x r` kernel-vector set,
/// `-(1/K) sum_{k1 != k2} |phi_k2 - phi_k1|^2`, averaged over the sets.
pub fn loss_separating(tape: &mut Tape, kernel_sets: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(kernel_sets.len());
    for &phi in kernel_sets {
        let k = tape.value(phi).rows();
        if k < 2 {
            terms.push(tape.constant(Tensor::scalar(0.0)));
            continue;
        }
        let d = tape.constant(pair_difference_matrix(k));
        let diffs = tape.matmul(d, phi)?;
        let sq = tape.squared_l2_norm(diffs)?;
        terms.push(tape.scalar_mul(sq, -1.0 / k as f64)?);
    }
    average(tape, terms)
}

/// Focusing regularizer: for each `n x K*r` deformation table,
/// `|Delta|^2 / (K n)`, averaged over the tables.
pub fn loss_focusing(tape: &mut Tape, deformations: &[Var], num_kernels: usize) -> Result<Var> {
    if num_kernels == 0 {
        return Err(Error::InvalidArgument("num_kernels must be positive".into()));
    }
    let mut terms = Vec::with_capacity(deformations.len());
    for &delta in deformations {
        let n = tape.value(delta).rows();
        let sq = tape.squared_l2_norm(delta)?;
        terms.push(tape.scalar_mul(sq, 1.0 / (num_kernels * n) as f64)?);
    }
    average(tape, terms)
}

/// Mean cross-entropy over the rows of `logits` listed in `nodes`.
pub fn loss_classification(tape: &mut Tape, logits: Var, labels: &[usize], nodes: &[usize]) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::EmptyMask("train"));
    }
    let idx: Arc<[usize]> = nodes.into();
    let targets: Arc<[usize]> = nodes.iter().map(|&v| labels[v]).collect();
    let rows = tape.gather_rows(logits, idx)?;
    tape.cross_entropy(rows, targets)
}

/// The three loss terms and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub cls: Var,
    pub sep: Var,
    pub focus: Var,
}

/// `L_cls + alpha * L_sep + beta * L_focus`.
pub fn loss_total(tape: &mut Tape, cls: Var, sep: Var, focus: Var, alpha: f64, beta: f64) -> Result<LossTerms> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::InvalidArgument("regularizer strengths must be non-negative".into()));
    }
    let a = tape.scalar_mul(sep, alpha)?;
    let b = tape.scalar_mul(focus, beta)?;
    let total = tape.add(cls, a)?;
    let total = tape.add(total, b)?;
    Ok(LossTerms { total, cls, sep, focus })
}
