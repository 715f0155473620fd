use std::sync::Arc;

use deform_gnn_core::tensor::{grad_check, grad_check_groups, OpKind, Tape, Tensor, Var};
use deform_gnn_core::{Error, Result};
use proptest::prelude::*;

type MultiOp = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type UnaryOp = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

/// Values bounded away from zero so relu and log stay differentiable.
fn away_from_zero(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![(-2.0f64..-1e-3), (1e-3f64..2.0)],
        len,
    )
}

/// Reduces any tensor to a scalar with a fixed, non-symmetric weighting so
/// that every output coordinate gets a distinct adjoint.
fn weighted_sum(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

#[test]
fn matmul_with_identity() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::identity(2));
    let b = tape.constant(mat(2, 1, &[3.0, 4.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0, 4.0]);
    assert_eq!(tape.value(c).shape(), &[2, 1]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let y = tape.softmax_groups(x, Arc::from(vec![0, 2])).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn row_normalize_three_four() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    let y = tape.row_l2_normalize(x).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
}

#[test]
fn row_normalize_leaves_tiny_rows_unchanged() {
    let mut tape = Tape::new();
    let x = tape.leaf(mat(2, 2, &[1e-13, 0.0, 2.0, 0.0]));
    let y = tape.row_l2_normalize(x).unwrap();
    assert_eq!(tape.value(y).data(), &[1e-13, 0.0, 1.0, 0.0]);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 5.0]));
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_squared_norm_is_twice_x() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
    let s = tape.squared_l2_norm(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0, 8.0]);
}

#[test]
fn backward_of_cross_entropy_is_softmax_minus_onehot() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
    let l = tape.cross_entropy(x, Arc::from(vec![0])).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[-0.5, 0.5]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_vars() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));

    let mut other = Tape::new();
    let y = other.leaf(Tensor::scalar(1.0));
    assert!(matches!(tape.backward(y), Err(Error::NotOnTape)));
}

#[test]
fn shape_mismatch_and_non_finite_are_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(mat(2, 3, &[1.0; 6]));
    let b = tape.constant(mat(2, 3, &[1.0; 6]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    let z = tape.constant(Tensor::vector(vec![0.0]));
    assert!(matches!(tape.log(z), Err(Error::NonFinite("log"))));
}

#[test]
fn constants_do_not_receive_gradients() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    let p = tape.mul(x, c).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn grad_check_sum_is_exact() {
    let err = grad_check(|t, x| t.sum(x), &Tensor::vector(vec![0.3, -1.2, 4.0]), EPS).unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn grad_check_squared_norm() {
    let err = grad_check(|t, x| t.squared_l2_norm(x), &Tensor::vector(vec![1.0, 2.0, 3.0]), EPS).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn grad_check_rejects_non_scalar_output() {
    let r = grad_check(|t, x| t.relu(x), &Tensor::vector(vec![1.0, 2.0]), EPS);
    assert!(matches!(r, Err(Error::NotScalar(_))));
}

#[test]
fn injected_fault_is_detected() {
    let point = mat(2, 2, &[0.5, -1.0, 2.0, 0.25]);
    let f = |t: &mut Tape, x: Var| {
        let y = t.exp(x)?;
        weighted_sum(t, y)
    };
    assert!(grad_check(f, &point, EPS).unwrap() < TOL);

    let mut tape = Tape::new();
    tape.inject_adjoint_fault(Some(OpKind::Exp));
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x).unwrap();
    let g = tape.backward(y).unwrap();
    let expected = point.data()[0].exp() * 0.3;
    assert!((g.get(x).unwrap().data()[0] - 1.5 * expected).abs() < 1e-12);
}

#[test]
fn replaying_a_tape_is_bit_identical() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(mat(2, 3, &[0.1, -0.7, 1.3, 2.2, -0.4, 0.9]));
        let w = tape.leaf(mat(3, 2, &[0.5, -0.25, 1.5, 0.75, -1.0, 0.3]));
        let h = tape.matmul(x, w).unwrap();
        let r = tape.relu(h).unwrap();
        let n = tape.row_l2_normalize(r).unwrap();
        let s = tape.softmax_groups(n, Arc::from(vec![0, 1, 2])).unwrap();
        let l = tape.cross_entropy(s, Arc::from(vec![1, 0])).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(l).clone(), g.get(w).unwrap().clone(), g.get(x).unwrap().clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_groups_is_a_simplex(x in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut tape = Tape::new();
        let v = tape.constant(mat(6, 2, &x));
        let y = tape.softmax_groups(v, Arc::from(vec![0, 2, 3, 6])).unwrap();
        let y = tape.value(y);
        for (lo, hi) in [(0, 2), (2, 3), (3, 6)] {
            for c in 0..2 {
                let total: f64 = (lo..hi).map(|r| y.get2(r, c)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                for r in lo..hi {
                    prop_assert!(y.get2(r, c) > 0.0 && y.get2(r, c) <= 1.0);
                }
            }
        }
    }

    #[test]
    fn row_normalize_gives_unit_rows(x in away_from_zero(12)) {
        let mut tape = Tape::new();
        let v = tape.constant(mat(4, 3, &x));
        let y = tape.row_l2_normalize(v).unwrap();
        let y = tape.value(y);
        for r in 0..4 {
            let norm: f64 = y.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_ops_pass_grad_check(a in away_from_zero(6), b in away_from_zero(6)) {
        let pts = [mat(2, 3, &a), mat(2, 3, &b)];
        let checks: Vec<(&str, MultiOp)> = vec![
            ("add", Box::new(|t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y) })),
            ("sub", Box::new(|t, v| { let y = t.sub(v[0], v[1])?; weighted_sum(t, y) })),
            ("mul", Box::new(|t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y) })),
            ("concat", Box::new(|t, v| { let y = t.concat(&[v[0], v[1], v[0]])?; weighted_sum(t, y) })),
            ("matmul", Box::new(|t, v| { let bt = t.transpose(v[1])?; let y = t.matmul(v[0], bt)?; weighted_sum(t, y) })),
        ];
        for (name, f) in checks {
            for r in grad_check_groups(f, &pts, EPS).unwrap() {
                prop_assert!(r.max_relative_error < TOL, "{name}: {r:?}");
            }
        }
    }

    #[test]
    fn unary_ops_pass_grad_check(a in away_from_zero(12), pos in prop::collection::vec(0.1f64..3.0, 12)) {
        let x = mat(4, 3, &a);
        let p = mat(4, 3, &pos);
        let keep: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
        let unary: Vec<(&str, &Tensor, UnaryOp)> = vec![
            ("scalar-mul", &x, Box::new(|t, v| { let y = t.scalar_mul(v, -2.5)?; weighted_sum(t, y) })),
            ("relu", &x, Box::new(|t, v| { let y = t.relu(v)?; weighted_sum(t, y) })),
            ("row-l2-normalize", &x, Box::new(|t, v| { let y = t.row_l2_normalize(v)?; weighted_sum(t, y) })),
            ("softmax-over-group", &x, Box::new(|t, v| { let y = t.softmax_groups(v, Arc::from(vec![0, 1, 4]))?; weighted_sum(t, y) })),
            ("exp", &x, Box::new(|t, v| { let y = t.exp(v)?; weighted_sum(t, y) })),
            ("log", &p, Box::new(|t, v| { let y = t.log(v)?; weighted_sum(t, y) })),
            ("sum", &x, Box::new(|t, v| { let y = t.scalar_mul(v, 1.7)?; let y = t.mul(y, v)?; t.sum(y) })),
            ("mean", &x, Box::new(|t, v| { let y = t.mul(v, v)?; t.mean(y) })),
            ("dropout", &x, Box::new(move |t, v| { let y = t.dropout(v, &keep, 0.5)?; weighted_sum(t, y) })),
            ("gather-rows", &x, Box::new(|t, v| { let y = t.gather_rows(v, Arc::from(vec![3, 0, 0, 2, 3]))?; weighted_sum(t, y) })),
            ("scatter-add-rows", &x, Box::new(|t, v| { let y = t.scatter_add_rows(v, Arc::from(vec![1, 0, 1, 4]), 5)?; weighted_sum(t, y) })),
            ("cross-entropy", &x, Box::new(|t, v| t.cross_entropy(v, Arc::from(vec![2, 0, 1, 1])))),
            ("squared-l2-norm", &x, Box::new(|t, v| t.squared_l2_norm(v))),
            ("transpose", &x, Box::new(|t, v| { let y = t.transpose(v)?; weighted_sum(t, y) })),
            ("slice-cols", &x, Box::new(|t, v| { let y = t.slice_cols(v, 1, 3)?; weighted_sum(t, y) })),
        ];
        for (name, point, f) in unary {
            let err = grad_check(f, point, EPS).unwrap();
            prop_assert!(err < TOL, "{name}: {err}");
        }
    }

    #[test]
    fn broadcast_ops_pass_grad_check(a in away_from_zero(12), b in away_from_zero(4)) {
        let pts = [mat(4, 3, &a), Tensor::vector(b[..3].to_vec()), Tensor::vector(b.clone())];
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.add_row(v[0], v[1])?;
            let y = t.mul_col(y, v[2])?;
            weighted_sum(t, y)
        };
        for r in grad_check_groups(f, &pts, EPS).unwrap() {
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }
    }

    #[test]
    fn edge_ops_pass_grad_check(w in away_from_zero(10), h in away_from_zero(9), r in away_from_zero(15), p in away_from_zero(18)) {
        let centers: Arc<[usize]> = Arc::from(vec![0, 0, 1, 2, 2]);
        let neighbors: Arc<[usize]> = Arc::from(vec![0, 2, 1, 2, 0]);
        let pts = [mat(5, 2, &w), mat(3, 3, &h)];
        let (c, n) = (centers.clone(), neighbors.clone());
        let f = move |t: &mut Tape, v: &[Var]| {
            let y = t.edge_aggregate(v[0], v[1], c.clone(), n.clone(), 3)?;
            weighted_sum(t, y)
        };
        for rep in grad_check_groups(f, &pts, EPS).unwrap() {
            prop_assert!(rep.max_relative_error < TOL, "edge-aggregate: {rep:?}");
        }
        let pts = [mat(5, 3, &r), mat(3, 6, &p)];
        let f = move |t: &mut Tape, v: &[Var]| {
            let y = t.edge_scores(v[0], v[1], centers.clone())?;
            weighted_sum(t, y)
        };
        for rep in grad_check_groups(f, &pts, EPS).unwrap() {
            prop_assert!(rep.max_relative_error < TOL, "edge-scores: {rep:?}");
        }
    }
}

#[test]
fn edge_aggregate_matches_gather_scale_scatter() {
    let mut tape = Tape::new();
    let w = tape.constant(mat(3, 2, &[0.5, 2.0, 1.0, -1.0, 0.25, 3.0]));
    let h = tape.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let y = tape
        .edge_aggregate(w, h, Arc::from(vec![0, 1, 1]), Arc::from(vec![1, 0, 1]), 2)
        .unwrap();
    // row 0: k0 0.5*h1, k1 2*h1; row 1: k0 1*h0 + 0.25*h1, k1 -1*h0 + 3*h1
    assert_eq!(
        tape.value(y).data(),
        &[1.5, 2.0, 6.0, 8.0, 1.75, 3.0, 8.0, 10.0]
    );
}

#[test]
fn edge_scores_are_blockwise_dots() {
    let mut tape = Tape::new();
    let r = tape.constant(mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    let p = tape.constant(mat(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
    let s = tape.edge_scores(r, p, Arc::from(vec![1, 0])).unwrap();
    assert_eq!(tape.value(s).data(), &[5.0, 7.0, 2.0, 4.0]);
}

