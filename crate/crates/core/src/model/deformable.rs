use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{linear, maybe_dropout, ForwardOptions, ForwardOutput, GraphContext, LevelOutput, ModelConfig, ParamSet};
use crate::deform::{deform_gconv, KernelParams, KernelVars};
use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::positional::{positional_embed, GraphLevel};
use crate::tensor::{Tape, Tensor, Var};

/// Parameter indices of one convolution.
#[derive(Clone, Copy, Debug)]
struct ConvSlots {
    kernel_vectors: usize,
    transforms: usize,
    deform_w1: usize,
    deform_b1: usize,
    deform_w2: usize,
    deform_b2: usize,
}

impl ConvSlots {
    fn vars(&self, vars: &[Var]) -> KernelVars {
        KernelVars {
            kernel_vectors: vars[self.kernel_vectors],
            transforms: vars[self.transforms],
            deform_w1: vars[self.deform_w1],
            deform_b1: vars[self.deform_b1],
            deform_w2: vars[self.deform_w2],
            deform_b2: vars[self.deform_b2],
        }
    }
}

pub(crate) struct Slots {
    encoder_w: usize,
    encoder_b: usize,
    positional: Vec<usize>,
    convs: Vec<ConvSlots>,
    fusion_z: usize,
    classifier_w: usize,
    classifier_b: usize,
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
        let encoder_w = params.push("encoder.weight", glorot_uniform(num_features, d_h, rng), true);
        let encoder_b = params.push("encoder.bias", Tensor::zeros(&[d_h]), false);
        let positional = (0..=config.num_smoothings)
            .map(|l| {
                let w = glorot_uniform(config.pos_dim, num_features, rng);
                params.push(format!("positional.{l}.weight"), w, true)
            })
            .collect();
        let shape = config.kernel_shape(num_features);
        let convs = (0..config.num_levels())
            .map(|i| {
                let kp = KernelParams::init(&shape, rng);
                ConvSlots {
                    kernel_vectors: params.push(format!("conv.{i}.kernel_vectors"), kp.kernel_vectors, false),
                    transforms: params.push(format!("conv.{i}.transforms"), kp.transforms, true),
                    deform_w1: params.push(format!("conv.{i}.deform_w1"), kp.deform_w1, true),
                    deform_b1: params.push(format!("conv.{i}.deform_b1"), kp.deform_b1, false),
                    deform_w2: params.push(format!("conv.{i}.deform_w2"), kp.deform_w2, true),
                    deform_b2: params.push(format!("conv.{i}.deform_b2"), kp.deform_b2, false),
                }
            })
            .collect();
        let fusion_z = params.push("fusion.z", glorot_uniform(d_h, 1, rng), true);
        let classifier_w = params.push("classifier.weight", glorot_uniform(d_h, num_classes, rng), true);
        let classifier_b = params.push("classifier.bias", Tensor::zeros(&[num_classes]), false);
        Self {
            encoder_w,
            encoder_b,
            positional,
            convs,
            fusion_z,
            classifier_w,
            classifier_b,
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
        let smoothed = ctx
            .smoothed()
            .ok_or_else(|| Error::InvalidArgument("graph context lacks smoothed features".into()))?;
        let edge_indices = ctx.edge_indices();
        if smoothed.num_levels() != config.num_smoothings + 1 || edge_indices.len() != config.num_levels() {
            return Err(Error::Shape(format!(
                "graph context has {} smoothing levels and {} graphs, model expects {} and {}",
                smoothed.num_levels(),
                edge_indices.len(),
                config.num_smoothings + 1,
                config.num_levels()
            )));
        }
        let mut rng = opts.dropout;

        let x = tape.constant(ctx.features().clone());
        let x = maybe_dropout(tape, x, config.dropout, &mut rng)?;
        let h = linear(tape, x, vars[self.encoder_w], vars[self.encoder_b])?;
        let h = tape.relu(h)?;

        let e: Vec<Var> = smoothed.levels().iter().map(|t| tape.constant(t.clone())).collect();
        let projections: Vec<Var> = self.positional.iter().map(|&i| vars[i]).collect();
        let phi = positional_embed(tape, &e, &projections)?;

        let shape = config.kernel_shape(ctx.features().cols());
        let deform = config.deform && !opts.zero_deformation;
        let last = config.num_smoothings;
        let mut levels = Vec::with_capacity(config.num_levels());
        for (i, (edges, conv)) in edge_indices.iter().zip(&self.convs).enumerate() {
            let level = config.level(i);
            let (p, f) = match level {
                GraphLevel::Latent(l) => (phi[l], e[l]),
                GraphLevel::Input => (phi[last], e[0]),
            };
            let kv = conv.vars(vars);
            let out = deform_gconv(tape, edges, h, p, f, &kv, &shape, deform)?;
            levels.push(LevelOutput {
                level,
                y: out.y,
                attention: out.attention,
                deformation: out.deformation,
                kernel_vectors: kv.kernel_vectors,
            });
        }

        let ys: Vec<Var> = levels.iter().map(|l| l.y).collect();
        let (fused, scores) = fuse_attention(tape, &ys, vars[self.fusion_z])?;
        let dropped = maybe_dropout(tape, fused, config.dropout, &mut rng)?;
        let logits = linear(tape, dropped, vars[self.classifier_w], vars[self.classifier_b])?;
        Ok(ForwardOutput {
            logits,
            fused: Some(fused),
            scores: Some(scores),
            levels,
        })
    }
}

/// Attention fusion of per-level outputs.
///
/// Each `ys[l]` (`n x d`) is row-normalized to `y~`, scored against `z`
/// (`d x 1`), and the per-node softmax of the scores weights the sum of
/// the normalized outputs. Returns the fused `n x d` representation and the
/// `n x levels` scores.
pub fn fuse_attention(tape: &mut Tape, ys: &[Var], z: Var) -> Result<(Var, Var)> {
    if ys.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one level".into()));
    }
    let normalized = ys
        .iter()
        .map(|&y| tape.row_l2_normalize(y))
        .collect::<Result<Vec<_>>>()?;
    let logits = normalized
        .iter()
        .map(|&y| tape.matmul(y, z))
        .collect::<Result<Vec<_>>>()?;
    let logits = tape.concat(&logits)?;
    let by_level = tape.transpose(logits)?;
    let offsets: Arc<[usize]> = Arc::from(vec![0, ys.len()]);
    let scores = tape.softmax_groups(by_level, offsets)?;
    let scores = tape.transpose(scores)?;
    debug_assert!(
        (0..tape.value(scores).rows()).all(|v| (tape.value(scores).row(v).iter().sum::<f64>() - 1.0).abs() < 1e-9),
        "fusion scores do not sum to one"
    );
    let mut fused = None;
    for (l, &y) in normalized.iter().enumerate() {
        let s = tape.slice_cols(scores, l, l + 1)?;
        let term = tape.mul_col(y, s)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((fused.expect("non-empty"), scores))
}
