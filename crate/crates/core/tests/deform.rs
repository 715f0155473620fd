mod common;

use common::{constant_z_conv, direct_conv, max_diff, rows, Rows};
use deform_gnn_core::deform::{deform_gconv, ConvDiagnostics, KernelParams, KernelShape};
use deform_gnn_core::graph::Dataset;
use deform_gnn_core::positional::{build_knn_graph, EdgeIndex, GraphLevel, NeighborhoodGraph};
use deform_gnn_core::tensor::{grad_check_groups, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    neighbors: Vec<Vec<usize>>,
    edges: EdgeIndex,
    h: Tensor,
    phi: Tensor,
    e: Tensor,
    params: KernelParams,
    shape: KernelShape,
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Ten nodes, random sizes, random biases; nodes 8 and 9 share their
/// position with nodes 0 and 1 so the indicator branch is exercised.
fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let shape = KernelShape {
        num_kernels: rng.gen_range(1..=4),
        pos_dim: rng.gen_range(2..=4),
        in_dim: 3,
        out_dim: 2,
        feature_dim: 5,
        deform_hidden: 4,
    };
    let mut params = KernelParams::init(&shape, &mut rng);
    params.deform_b1 = Tensor::vector((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect());
    let rel = shape.relation_dim() * shape.num_kernels;
    params.deform_b2 = Tensor::vector((0..rel).map(|_| rng.gen_range(-0.5..0.5)).collect());
    let mut phi = random_matrix(n, shape.pos_dim, &mut rng);
    for (dup, src) in [(8, 0), (9, 1)] {
        let row = phi.row(src).to_vec();
        phi.row_mut(dup).copy_from_slice(&row);
    }
    let graph = if seed.is_multiple_of(2) {
        let edges: Vec<(usize, usize)> = (0..15).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
        let ds = Dataset::new(Tensor::zeros(&[n, 1]), edges, vec![0; n], 1).unwrap();
        NeighborhoodGraph::from_input(&ds)
    } else {
        build_knn_graph(&random_matrix(n, 3, &mut rng), 4).unwrap()
    };
    let neighbors = (0..n).map(|v| graph.neighbors(v).to_vec()).collect();
    Instance {
        neighbors,
        edges: graph.edge_index(),
        h: random_matrix(n, 3, &mut rng),
        phi,
        e: random_matrix(n, 5, &mut rng),
        params,
        shape,
    }
}

fn run(inst: &Instance, deform: bool) -> (Rows, Tensor) {
    let mut tape = Tape::new();
    let h = tape.constant(inst.h.clone());
    let phi = tape.constant(inst.phi.clone());
    let e = tape.constant(inst.e.clone());
    let vars = inst.params.attach(&mut tape);
    let out = deform_gconv(&mut tape, &inst.edges, h, phi, e, &vars, &inst.shape, deform).unwrap();
    (rows(tape.value(out.y)), tape.value(out.attention).clone())
}

fn flat_weights(reference: &[Rows]) -> Rows {
    reference.iter().flatten().cloned().collect()
}

#[test]
fn factored_conv_matches_literal_double_sum() {
    for seed in 0..20 {
        let inst = instance(seed);
        let (y, attention) = run(&inst, true);
        let reference = direct_conv(&inst.neighbors, &rows(&inst.h), &rows(&inst.phi), &rows(&inst.e), &inst.params, true);
        assert!(max_diff(&y, &reference.y) < 1e-10, "seed {seed}: y differs by {}", max_diff(&y, &reference.y));
        let diff = max_diff(&rows(&attention), &flat_weights(&reference.weights));
        assert!(diff < 1e-10, "seed {seed}: weights differ by {diff}");
    }
}

#[test]
fn undeformed_conv_matches_constant_normalizer_kernel() {
    for seed in 0..20 {
        let inst = instance(seed);
        let (y, _) = run(&inst, false);
        let reference = constant_z_conv(&inst.neighbors, &rows(&inst.h), &rows(&inst.phi), &inst.params);
        let diff = max_diff(&y, &reference);
        assert!(diff < 1e-10, "seed {seed}: {diff}");
    }
}

#[test]
fn zero_deformation_network_equals_undeformed_conv() {
    let mut inst = instance(3);
    for t in [&mut inst.params.deform_w1, &mut inst.params.deform_b1, &mut inst.params.deform_w2, &mut inst.params.deform_b2] {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    assert!(max_diff(&run(&inst, true).0, &run(&inst, false).0) < 1e-12);
}

#[test]
fn kernel_weights_are_normalized_per_center_and_kernel() {
    for seed in 0..20 {
        let inst = instance(seed);
        for deform in [true, false] {
            let (_, attention) = run(&inst, deform);
            let diag = ConvDiagnostics::new(GraphLevel::Latent(0), &inst.edges, attention);
            assert!(diag.max_normalization_error() < 1e-9);
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let inst = instance(4);
    let p = &inst.params;
    let w_phi = {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        random_matrix(inst.shape.pos_dim, 5, &mut rng)
    };
    let points = [
        p.kernel_vectors.clone(),
        p.transforms.clone(),
        p.deform_w1.clone(),
        p.deform_b1.clone(),
        p.deform_w2.clone(),
        p.deform_b2.clone(),
        w_phi,
        inst.h.clone(),
    ];
    let f = |tape: &mut Tape, v: &[Var]| {
        let vars = deform_gnn_core::deform::KernelVars {
            kernel_vectors: v[0],
            transforms: v[1],
            deform_w1: v[2],
            deform_b1: v[3],
            deform_w2: v[4],
            deform_b2: v[5],
        };
        // positions come from a projection of the smoothed features
        let e = tape.constant(inst.e.clone());
        let wt = tape.transpose(v[6])?;
        let phi = tape.matmul(e, wt)?;
        let out = deform_gconv(tape, &inst.edges, v[7], phi, e, &vars, &inst.shape, true)?;
        let w = tape.constant(Tensor::new(vec![10, 2], (0..20).map(|i| 0.1 + 0.07 * i as f64).collect())?);
        let prod = tape.mul(out.y, w)?;
        tape.sum(prod)
    };
    for (i, r) in grad_check_groups(f, &points, 1e-5).unwrap().iter().enumerate() {
        assert!(r.max_relative_error < 1e-4, "group {i}: {r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn translating_positions_changes_nothing(seed in 0u64..1000, c in prop::collection::vec(-3.0f64..3.0, 4)) {
        let inst = instance(seed);
        let (y, a) = run(&inst, true);
        let mut moved = instance(seed);
        let d = moved.shape.pos_dim;
        for r in 0..10 {
            for (x, s) in moved.phi.row_mut(r).iter_mut().zip(&c[..d]) {
                *x += s;
            }
        }
        let (y2, a2) = run(&moved, true);
        // differences cancel up to rounding of the shifted coordinates
        prop_assert!(max_diff(&y, &y2) < 1e-9);
        prop_assert!(max_diff(&rows(&a), &rows(&a2)) < 1e-9);
    }
}
