//! Momentum SGD with per-partition learning rates and a plateau schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Partition, PartitionSet, Weights};

/// Optimizer hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Learning rate of the shared encoder.
    pub lr_backbone: f64,
    /// Learning rate of the tool head, phase head and mapping cell.
    pub lr_branches: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr_backbone: 5e-5,
            lr_branches: 5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_backbone > 0.0 && self.lr_branches > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be non-negative"));
        }
        Ok(())
    }
}

/// Velocity buffers and current learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Weights,
    pub lr_backbone: f64,
    pub lr_branches: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, cfg: &OptimizerConfig) -> Self {
        Self {
            velocity: params.weights.zeros_like(),
            lr_backbone: cfg.lr_backbone,
            lr_branches: cfg.lr_branches,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn lr(&self, part: Partition) -> f64 {
        match part {
            Partition::Backbone => self.lr_backbone,
            _ => self.lr_branches,
        }
    }
}

/// `v = momentum * v + g + weight_decay * w; w -= lr * v` on every trainable
/// partition. Frozen partitions and their velocities are left untouched.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Weights,
    opt: &mut OptimizerState,
    trainable: PartitionSet,
) -> Result<()> {
    for part in trainable.iter() {
        for (name, g) in grads.partition_tensors(part) {
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    partition: part.name().into(),
                    msg: format!("non-finite gradient in {name}"),
                });
            }
        }
    }
    for part in trainable.iter() {
        let lr = opt.lr(part);
        let (m, wd) = (opt.momentum, opt.weight_decay);
        let g = grads.partition_tensors(part);
        let v = opt.velocity.partition_tensors_mut(part);
        let w = params.weights.partition_tensors_mut(part);
        for ((wt, vt), (_, gt)) in w.into_iter().zip(v).zip(g) {
            for ((wi, vi), gi) in wt.data.iter_mut().zip(vt.data.iter_mut()).zip(&gt.data) {
                *vi = m * *vi + gi + wd * *wi;
                *wi -= lr * *vi;
            }
        }
    }
    Ok(())
}

/// Patience (epochs) and minimum improvement of the validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 3,
            min_delta: 1e-3,
        }
    }
}

/// Tracks the best validation loss and divides the learning rates by 10
/// after `patience` epochs without an improvement larger than `min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauTracker {
    pub config: PlateauConfig,
    best: f64,
    wait: usize,
}

impl PlateauTracker {
    pub fn new(config: PlateauConfig) -> Self {
        Self {
            config,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Records one epoch; returns true when the learning rates were reduced.
    pub fn observe(&mut self, loss: f64, opt: &mut OptimizerState) -> bool {
        if loss < self.best - self.config.min_delta || self.best == f64::INFINITY {
            self.best = self.best.min(loss);
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait >= self.config.patience {
            opt.lr_backbone /= 10.0;
            opt.lr_branches /= 10.0;
            self.wait = 0;
            return true;
        }
        false
    }
}

/// Replays a validation history and reduces the learning rates if the last
/// epoch completes a plateau.
pub fn lr_on_plateau(history: &[f64], opt: &mut OptimizerState, config: PlateauConfig) -> bool {
    let mut tracker = PlateauTracker::new(config);
    let mut scratch = opt.clone();
    let mut last = false;
    for &v in history {
        last = tracker.observe(v, &mut scratch);
    }
    if last {
        opt.lr_backbone /= 10.0;
        opt.lr_branches /= 10.0;
    }
    last
}
