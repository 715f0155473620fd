//! Losses, optimization, the training loop and accuracy metrics.

mod adam;
mod losses;
mod metrics;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use losses::{loss_classification, loss_focusing, loss_separating, loss_total, LossTerms};
pub use metrics::{accuracy, predictions, Summary};

use crate::error::{Error, Result};
use crate::graph::{SplitMasks, SplitPart};
use crate::model::{ForwardOptions, ForwardOutput, GraphContext, Model, ModelConfig};
use crate::tensor::{Tape, Var};

/// Optimization settings plus the model architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Strength of the separating regularizer.
    pub alpha: f64,
    /// Strength of the focusing regularizer.
    pub beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 500,
            alpha: 1e-2,
            beta: 1e-2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_sep: f64,
    pub loss_focus: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Result of one training run.
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Forward pass plus the full loss on `train_nodes`.
pub fn forward_with_loss(
    model: &Model,
    tape: &mut Tape,
    vars: &[Var],
    ctx: &GraphContext,
    train_nodes: &[usize],
    config: &TrainConfig,
    opts: ForwardOptions<'_>,
) -> Result<(LossTerms, ForwardOutput)> {
    let out = model.forward(tape, vars, ctx, opts)?;
    let cls = loss_classification(tape, out.logits, ctx.labels(), train_nodes)?;
    let kernels: Vec<Var> = out.levels.iter().map(|l| l.kernel_vectors).collect();
    let sep = loss_separating(tape, &kernels)?;
    let deformations: Vec<Var> = out.levels.iter().filter_map(|l| l.deformation).collect();
    let focus = loss_focusing(tape, &deformations, model.config().num_kernels)?;
    let terms = loss_total(tape, cls, sep, focus, config.alpha, config.beta)?;
    Ok((terms, out))
}

/// Trains on one split and keeps the parameters of the epoch with the best
/// validation accuracy (earliest on ties).
pub fn train(ctx: &GraphContext, split: &SplitMasks, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if split.len() != ctx.num_nodes() {
        return Err(Error::Shape(format!(
            "split covers {} nodes, graph has {}",
            split.len(),
            ctx.num_nodes()
        )));
    }
    let train_nodes = split.indices(SplitPart::Train);
    let val_nodes = split.indices(SplitPart::Val);
    let test_nodes = split.indices(SplitPart::Test);
    for (name, nodes) in [("train", &train_nodes), ("val", &val_nodes), ("test", &test_nodes)] {
        if nodes.is_empty() {
            return Err(Error::EmptyMask(name));
        }
    }

    let mut model = Model::new(
        config.model.clone(),
        ctx.features().cols(),
        ctx.num_classes(),
        config.seed,
    )?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(model.params(), config.lr, config.weight_decay);
    let labels = ctx.labels().clone();

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, f64, crate::model::ParamSet)> = None;
    for epoch in 1..=config.epochs {
        let diverged = |e: Error| match e {
            Error::NonFinite(op) => Error::Diverged {
                epoch,
                reason: format!("non-finite value in {op}"),
            },
            other => other,
        };
        let mut tape = Tape::new();
        let vars = model.params().attach(&mut tape);
        let opts = ForwardOptions {
            dropout: Some(&mut dropout_rng),
            zero_deformation: false,
        };
        let (terms, _) =
            forward_with_loss(&model, &mut tape, &vars, ctx, &train_nodes, config, opts).map_err(diverged)?;
        let grads = tape.backward(terms.total).map_err(diverged)?;
        let grads: Vec<_> = vars
            .iter()
            .zip(model.params().iter())
            .map(|(&v, p)| grads.get_or_zeros(v, &p.value))
            .collect();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite gradient".into(),
            });
        }
        adam.step(model.params_mut(), &grads)?;

        let logits = model.predict(ctx).map_err(diverged)?;
        let val_acc = accuracy(&logits, &labels, &val_nodes, "val")?;
        let test_acc = accuracy(&logits, &labels, &test_nodes, "test")?;
        log.push(EpochLog {
            epoch,
            loss_cls: tape.value(terms.cls).item(),
            loss_sep: tape.value(terms.sep).item(),
            loss_focus: tape.value(terms.focus).item(),
            val_acc,
            test_acc,
        });
        if best.as_ref().is_none_or(|b| val_acc > b.1) {
            best = Some((epoch, val_acc, test_acc, model.params().clone()));
        }
    }

    let (best_epoch, val_acc, test_acc, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        val_acc,
        test_acc,
    })
}

/// Accuracy of `model` on one split part.
pub fn evaluate(model: &Model, ctx: &GraphContext, split: &SplitMasks, part: SplitPart) -> Result<f64> {
    let logits = model.predict(ctx)?;
    accuracy(&logits, ctx.labels(), &split.indices(part), part.as_str())
}
