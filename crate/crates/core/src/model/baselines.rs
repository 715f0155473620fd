use rand_chacha::ChaCha8Rng;

use super::{linear, maybe_dropout, ForwardOptions, ForwardOutput, GraphContext, ModelConfig, ModelKind, ParamSet};
use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::tensor::{Tape, Tensor, Var};

/// Two-layer GCN or MLP.
pub(crate) struct Slots {
    kind: ModelKind,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Slots {
    pub(crate) fn init(
        config: &ModelConfig,
        num_features: usize,
        num_classes: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d_h = config.hidden_dim;
        Self {
            kind: config.kind,
            w1: params.push("layer1.weight", glorot_uniform(num_features, d_h, rng), true),
            b1: params.push("layer1.bias", Tensor::zeros(&[d_h]), false),
            w2: params.push("layer2.weight", glorot_uniform(d_h, num_classes, rng), true),
            b2: params.push("layer2.bias", Tensor::zeros(&[num_classes]), false),
        }
    }

    pub(crate) fn forward(
        &self,
        config: &ModelConfig,
        tape: &mut Tape,
        vars: &[Var],
        ctx: &GraphContext,
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        let mut rng = opts.dropout;
        let x = tape.constant(ctx.features().clone());
        let x = maybe_dropout(tape, x, config.dropout, &mut rng)?;
        let h = self.layer(tape, ctx, x, vars[self.w1], vars[self.b1])?;
        let h = tape.relu(h)?;
        let h = maybe_dropout(tape, h, config.dropout, &mut rng)?;
        let logits = self.layer(tape, ctx, h, vars[self.w2], vars[self.b2])?;
        Ok(ForwardOutput {
            logits,
            fused: None,
            scores: None,
            levels: Vec::new(),
        })
    }

    fn layer(&self, tape: &mut Tape, ctx: &GraphContext, x: Var, w: Var, b: Var) -> Result<Var> {
        match self.kind {
            ModelKind::Gcn => {
                let adj = ctx
                    .adjacency()
                    .ok_or_else(|| Error::InvalidArgument("graph context lacks the normalized adjacency".into()))?;
                let xw = tape.matmul(x, w)?;
                let coef = tape.constant(adj.weights.clone());
                let agg = tape.edge_aggregate(
                    coef,
                    xw,
                    adj.edges.centers.clone(),
                    adj.edges.neighbors.clone(),
                    ctx.num_nodes(),
                )?;
                tape.add_row(agg, b)
            }
            _ => linear(tape, x, w, b),
        }
    }
}
