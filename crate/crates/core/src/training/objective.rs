//! Batch loss and gradient evaluation.

use ndarray::s;

use crate::error::{Error, Result};
use crate::losses::{clip_objective, total_loss, ActiveTerms, ClipLabels, Lambdas, LossBreakdown, LossComponents};
use crate::model::{batch_traces, clip_backward, ClipBatch, ModelParams, Partition, PartitionSet, Weights};
use crate::parallel::{map_indexed, Exec};

/// Averaged loss components and the gradient of the weighted data terms.
#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub components: LossComponents,
    pub breakdown: LossBreakdown,
    /// Gradient of the active data terms only; weight decay is applied by the
    /// optimizer.
    pub grads: Weights,
}

/// Forward and backward pass over a batch.
///
/// Clips are processed independently (in parallel unless `exec` is
/// sequential) and their gradients are summed in clip order, so the result
/// does not depend on scheduling.
pub fn evaluate_batch(
    params: &ModelParams,
    batch: &ClipBatch,
    lambdas: Lambdas,
    active: ActiveTerms,
    trainable: PartitionSet,
    exec: Exec,
) -> Result<BatchEvaluation> {
    let cfg = &params.config;
    batch.validate(cfg.num_tools, cfg.num_phases)?;
    let (b, n) = (batch.batch_size(), batch.clip_len());
    if batch.frames.shape()[2..] != [cfg.channels, cfg.frame_size, cfg.frame_size] {
        return Err(Error::dim(format!(
            "frames have shape {:?}, model expects {}x{}x{}",
            batch.frames.shape(),
            cfg.channels,
            cfg.frame_size,
            cfg.frame_size
        )));
    }
    let scale = 1.0 / (b * n) as f64;
    let with_backbone = trainable.contains(Partition::Backbone);
    let traces = batch_traces(&batch.frames.view(), params, exec, true);
    let per_clip = map_indexed(&traces, exec, |i, trace| {
        let tools: Vec<Vec<u8>> = (0..n)
            .map(|t| batch.tool_labels.slice(s![i, t, ..]).to_vec())
            .collect();
        let phases: Vec<usize> = batch.phase_labels.slice(s![i, ..]).to_vec();
        let labels = ClipLabels {
            tools: &tools,
            phases: &phases,
        };
        let (sums, dout) = clip_objective(trace, &labels, lambdas, active, scale);
        let mut grad = params.weights.zeros_like();
        clip_backward(params, trace, dout, with_backbone, &mut grad);
        (sums, grad)
    });

    let mut components = LossComponents::default();
    let mut grads = params.weights.zeros_like();
    for (sums, g) in &per_clip {
        components.tool += sums.tool;
        components.phase += sums.phase;
        components.correlation += sums.correlation;
        components.mapped_tool += sums.mapped_tool;
        grads.add_scaled(g, 1.0);
    }
    components.tool *= scale;
    components.phase *= scale;
    components.correlation *= scale;
    components.mapped_tool *= scale;
    components.weight_decay = params.weights.squared_norm(trainable);
    for p in trainable.complement().iter() {
        grads.zero_partition(p);
    }
    let breakdown = total_loss(components, lambdas, active)?;
    Ok(BatchEvaluation {
        components,
        breakdown,
        grads,
    })
}

/// Gradient of the full weighted objective, including `λ3 · ‖W‖²` over the
/// trainable partitions.
pub fn total_gradient(params: &ModelParams, eval: &BatchEvaluation, lambdas: Lambdas, trainable: PartitionSet) -> Weights {
    let mut g = eval.grads.clone();
    let mut decay = params.weights.clone();
    for p in trainable.complement().iter() {
        decay.zero_partition(p);
    }
    g.add_scaled(&decay, 2.0 * lambdas.decay);
    g
}
