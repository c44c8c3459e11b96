#![allow(dead_code)]

use mtrcnet::losses::{ActiveTerms, Lambdas};
use mtrcnet::model::{relu_pattern, ArchConfig, ClipBatch, EncoderBlock, ModelParams, Partition, PartitionSet};
use mtrcnet::parallel::Exec;
use mtrcnet::training::{evaluate_batch, total_gradient};
use ndarray::{Array2, Array3, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_config() -> ArchConfig {
    ArchConfig {
        frame_size: 6,
        channels: 2,
        feature_dim: 5,
        phase_feature_dim: 4,
        num_tools: 7,
        num_phases: 7,
        clip_len: 3,
        encoder: vec![
            EncoderBlock::Conv {
                channels: 3,
                kernel: 3,
                stride: 1,
            },
            EncoderBlock::Residual { kernel: 3 },
            EncoderBlock::Conv {
                channels: 4,
                kernel: 3,
                stride: 2,
            },
        ],
        ..Default::default()
    }
}

pub fn random_batch(cfg: &ArchConfig, batch: usize, n: usize, seed: u64) -> ClipBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.frame_size;
    let frames = Array5::from_shape_fn((batch, n, cfg.channels, s, s), |_| rng.random::<f64>());
    let tool_labels = Array3::from_shape_fn((batch, n, cfg.num_tools), |_| rng.random_bool(0.4) as u8);
    let phase_labels = Array2::from_shape_fn((batch, n), |_| rng.random_range(0..cfg.num_phases));
    ClipBatch {
        frames,
        tool_labels,
        phase_labels,
        video_ids: (0..batch).map(|i| format!("v{i}")).collect(),
        start_frames: vec![0; batch],
    }
}

fn perturb(params: &mut ModelParams, part: Partition, tensor: usize, idx: usize, delta: f64) {
    params.weights.partition_tensors_mut(part)[tensor].data[idx] += delta;
}

/// Per-partition outcome of a finite-difference check.
#[derive(Debug, Clone)]
pub struct PartitionCheck {
    pub partition: Partition,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries whose ±step perturbation flips a ReLU; the central difference
    /// straddles a kink there and is not a valid reference.
    pub kinked: usize,
}

/// Largest relative error between analytic and central-difference gradients
/// per partition. Relative error is `|a - n| / max(|a|, |n|)`, with entries
/// where both are below `1e-8` compared absolutely.
pub fn gradient_check(
    params: &ModelParams,
    batch: &ClipBatch,
    lambdas: Lambdas,
    active: ActiveTerms,
    trainable: PartitionSet,
    step: f64,
) -> Vec<PartitionCheck> {
    let eval = evaluate_batch(params, batch, lambdas, active, trainable, Exec::Sequential).unwrap();
    let analytic = total_gradient(params, &eval, lambdas, trainable);
    let objective = |p: &ModelParams| {
        evaluate_batch(p, batch, lambdas, active, trainable, Exec::Sequential)
            .unwrap()
            .breakdown
            .total
    };
    let mut out = Vec::new();
    for part in trainable.iter() {
        let tensors = analytic.partition_tensors(part);
        let mut worst = 0.0f64;
        let mut count = 0;
        let mut kinked = 0;
        for (ti, (_, g)) in tensors.iter().enumerate() {
            for idx in 0..g.data.len() {
                let mut plus = params.clone();
                perturb(&mut plus, part, ti, idx, step);
                let mut minus = params.clone();
                perturb(&mut minus, part, ti, idx, -step);
                let base = relu_pattern(batch.frames.view(), params).unwrap();
                if relu_pattern(batch.frames.view(), &plus).unwrap() != base
                    || relu_pattern(batch.frames.view(), &minus).unwrap() != base
                {
                    kinked += 1;
                    continue;
                }
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * step);
                let a = g.data[idx];
                let denom = a.abs().max(numeric.abs());
                let err = if denom < 1e-8 {
                    (a - numeric).abs()
                } else {
                    (a - numeric).abs() / denom
                };
                worst = worst.max(err);
                count += 1;
            }
        }
        out.push(PartitionCheck {
            partition: part,
            max_rel_err: worst,
            checked: count,
            kinked,
        });
    }
    out
}
