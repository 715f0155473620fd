//! Node classifiers: the deformable network and the GCN / MLP baselines.
//!
//! A [`Model`] owns its configuration and a [`ParamSet`]. Forward passes
//! attach the parameters to a fresh [`Tape`] and read graph data from a
//! [`GraphContext`].

mod baselines;
mod checkpoint;
mod context;
mod deformable;
mod params;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointParam, CHECKPOINT_FORMAT};
pub use context::{GraphContext, NormalizedAdjacency};
pub use deformable::fuse_attention;
pub use params::{Param, ParamSet};

use crate::deform::{ConvDiagnostics, KernelShape};
use crate::error::{Error, Result};
use crate::positional::GraphLevel;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Deformable,
    Gcn,
    Mlp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Deformable => "deformable",
            ModelKind::Gcn => "gcn",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deformable" => Ok(ModelKind::Deformable),
            "gcn" => Ok(ModelKind::Gcn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. Baselines use `hidden_dim` and `dropout`
/// only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    /// Number of smoothing steps `L`; the deformable model convolves over
    /// `L + 1` kNN graphs plus the input graph.
    pub num_smoothings: usize,
    pub num_kernels: usize,
    /// Neighbors per node in the kNN graphs.
    pub knn: usize,
    pub pos_dim: usize,
    pub dropout: f64,
    /// Hidden width of the deformation perceptron; `None` means `hidden_dim`.
    pub deform_hidden: Option<usize>,
    /// When false the deformation vectors are fixed at zero.
    pub deform: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Deformable,
            hidden_dim: 64,
            num_smoothings: 2,
            num_kernels: 4,
            knn: 5,
            pos_dim: 16,
            dropout: 0.5,
            deform_hidden: None,
            deform: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.hidden_dim == 0 || self.num_kernels == 0 || self.pos_dim == 0 || self.knn == 0 {
            return bad("hidden_dim, num_kernels, pos_dim and knn must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.deform_hidden == Some(0) {
            return bad("deform_hidden must be positive");
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.num_smoothings + 2
    }

    pub fn level(&self, i: usize) -> GraphLevel {
        if i <= self.num_smoothings {
            GraphLevel::Latent(i)
        } else {
            GraphLevel::Input
        }
    }

    pub(crate) fn kernel_shape(&self, num_features: usize) -> KernelShape {
        KernelShape {
            num_kernels: self.num_kernels,
            pos_dim: self.pos_dim,
            in_dim: self.hidden_dim,
            out_dim: self.hidden_dim,
            feature_dim: num_features,
            deform_hidden: self.deform_hidden.unwrap_or(self.hidden_dim),
        }
    }
}

/// Tape values of one deformable convolution inside a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LevelOutput {
    pub level: GraphLevel,
    pub y: Var,
    pub attention: Var,
    pub deformation: Option<Var>,
    pub kernel_vectors: Var,
}

/// Result of a forward pass. Fields beyond `logits` are present for the
/// deformable model only.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub fused: Option<Var>,
    /// `n x (L+2)` fusion scores.
    pub scores: Option<Var>,
    pub levels: Vec<LevelOutput>,
}

impl ForwardOutput {
    /// Detached kernel weights for every level.
    pub fn diagnostics(&self, tape: &Tape, ctx: &GraphContext) -> Vec<ConvDiagnostics> {
        self.levels
            .iter()
            .zip(ctx.edge_indices())
            .map(|(l, edges)| ConvDiagnostics::new(l.level, edges, tape.value(l.attention).clone()))
            .collect()
    }
}

/// How a forward pass behaves.
pub struct ForwardOptions<'a> {
    /// Dropout source; `None` is evaluation mode.
    pub dropout: Option<&'a mut ChaCha8Rng>,
    /// Forces zero deformation regardless of the configuration.
    pub zero_deformation: bool,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        Self {
            dropout: None,
            zero_deformation: false,
        }
    }
}

pub(crate) enum Layout {
    Deformable(deformable::Slots),
    Baseline(baselines::Slots),
}

/// A node classifier with its parameters.
pub struct Model {
    config: ModelConfig,
    num_features: usize,
    num_classes: usize,
    params: ParamSet,
    layout: Layout,
}

impl Model {
    /// Initializes parameters from `seed`.
    pub fn new(config: ModelConfig, num_features: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_features == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument("model needs features and classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let layout = match config.kind {
            ModelKind::Deformable => Layout::Deformable(deformable::Slots::init(
                &config,
                num_features,
                num_classes,
                &mut params,
                &mut rng,
            )),
            ModelKind::Gcn | ModelKind::Mlp => Layout::Baseline(baselines::Slots::init(
                &config,
                num_features,
                num_classes,
                &mut params,
                &mut rng,
            )),
        };
        Ok(Self {
            config,
            num_features,
            num_classes,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        ctx: &GraphContext,
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        if vars.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameter vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        if ctx.features().cols() != self.num_features {
            return Err(Error::Shape(format!(
                "dataset has {} features, model expects {}",
                ctx.features().cols(),
                self.num_features
            )));
        }
        match &self.layout {
            Layout::Deformable(slots) => slots.forward(&self.config, tape, vars, ctx, opts),
            Layout::Baseline(slots) => slots.forward(&self.config, tape, vars, ctx, opts),
        }
    }

    /// Evaluation-mode logits on a fresh tape.
    pub fn predict(&self, ctx: &GraphContext) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let out = self.forward(&mut tape, &vars, ctx, ForwardOptions::eval())?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Applies inverted dropout when a dropout source is present.
pub(crate) fn maybe_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep: Vec<bool> = (0..tape.value(x).numel()).map(|_| rng.gen::<f64>() >= rate).collect();
            tape.dropout(x, &keep, rate)
        }
        _ => Ok(x),
    }
}

/// `x W + b` with `W` stored input-major.
pub(crate) fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}
