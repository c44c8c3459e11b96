//! Momentum SGD, plateau schedule and staged training strategies.

mod objective;
mod optimizer;
mod plan;
mod run;

pub use objective::{evaluate_batch, total_gradient, BatchEvaluation};
pub use optimizer::{
    lr_on_plateau, sgd_step, OptimizerConfig, OptimizerState, PlateauConfig, PlateauTracker,
};
pub use plan::{StageEpochs, StageSpec, Strategy, TrainConfig, TrainPlan};
pub use run::{
    load_checkpoint, run_plan, save_checkpoint, sha256_hex, train_stage, train_val_split,
    validation_loss, RunManifest, RunOutcome, StageLog,
};
