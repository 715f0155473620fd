//! Whole-model gradient check on a six-node toy graph.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::model::{ForwardOptions, GraphContext, Model, ModelConfig, ModelKind};
use crate::tensor::{grad_check_groups, OpKind, Tape, Tensor};
use crate::train::{forward_with_loss, TrainConfig};

/// Parameter groups reported by [`check_model_gradients`], in order.
pub const PARAM_GROUPS: [&str; 7] = [
    "encoder",
    "positional",
    "kernel_vectors",
    "transforms",
    "deformation",
    "fusion",
    "classifier",
];

/// Group of a deformable-model parameter name.
pub fn param_group(name: &str) -> &'static str {
    let last = name.rsplit('.').next().unwrap_or(name);
    if name.starts_with("encoder.") {
        "encoder"
    } else if name.starts_with("positional.") {
        "positional"
    } else if name.starts_with("fusion.") {
        "fusion"
    } else if name.starts_with("classifier.") {
        "classifier"
    } else if last == "kernel_vectors" {
        "kernel_vectors"
    } else if last == "transforms" {
        "transforms"
    } else {
        "deformation"
    }
}

/// Six nodes, three classes, four features; a ring with one chord.
pub fn toy_dataset() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let features = Tensor::matrix(6, 4, features).expect("dims");
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)];
    Dataset::new(features, edges, vec![0, 1, 2, 0, 1, 2], 3).expect("valid toy graph")
}

/// Configuration used with [`toy_dataset`]: `L = 1`, `K = 2`, small
/// widths, `alpha = beta = 0.1`, dropout off.
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            kind: ModelKind::Deformable,
            hidden_dim: 4,
            num_smoothings: 1,
            num_kernels: 2,
            knn: 2,
            pos_dim: 2,
            dropout: 0.0,
            deform_hidden: Some(3),
            deform: true,
        },
        alpha: 0.1,
        beta: 0.1,
        seed: 3,
        ..TrainConfig::default()
    }
}

/// Worst finite-difference disagreement within one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: &'static str,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares the total-loss gradient of every parameter against central
/// differences, with every node in the loss. Refuses configurations with
/// dropout, which would make the loss stochastic. `fault` corrupts one op
/// kind's adjoint, for negative controls.
pub fn check_model_gradients(
    dataset: &Dataset,
    config: &TrainConfig,
    epsilon: f64,
    fault: Option<OpKind>,
) -> Result<Vec<GroupReport>> {
    if config.model.dropout != 0.0 {
        return Err(Error::InvalidArgument(
            "gradient check needs dropout = 0; dropout makes the loss non-deterministic".into(),
        ));
    }
    config.validate()?;
    let ctx = GraphContext::build(dataset, &config.model)?;
    let model = Model::new(
        config.model.clone(),
        dataset.num_features(),
        dataset.num_classes(),
        config.seed,
    )?;
    let nodes: Arc<[usize]> = (0..dataset.num_nodes()).collect();
    let points = model.params().values();
    let f = |tape: &mut Tape, vars: &[crate::tensor::Var]| {
        tape.inject_adjoint_fault(fault);
        let (terms, _) = forward_with_loss(&model, tape, vars, &ctx, &nodes, config, ForwardOptions::eval())?;
        Ok(terms.total)
    };
    let reports = grad_check_groups(f, &points, epsilon)?;

    let mut groups: Vec<GroupReport> = Vec::new();
    for (param, report) in model.params().iter().zip(reports) {
        let name = match config.model.kind {
            ModelKind::Deformable => param_group(&param.name),
            _ => "baseline",
        };
        let entry = match groups.iter_mut().find(|g| g.group == name) {
            Some(g) => g,
            None => {
                groups.push(GroupReport {
                    group: name,
                    max_relative_error: 0.0,
                    max_abs_error: 0.0,
                    coordinates: 0,
                });
                groups.last_mut().expect("just pushed")
            }
        };
        entry.max_relative_error = entry.max_relative_error.max(report.max_relative_error);
        entry.max_abs_error = entry.max_abs_error.max(report.max_abs_error);
        entry.coordinates += report.coordinates;
    }
    Ok(groups)
}
