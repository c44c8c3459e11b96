//! Stage execution, checkpoints and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::objective::evaluate_batch;
use super::optimizer::{sgd_step, OptimizerState, PlateauTracker};
use super::plan::{StageSpec, TrainConfig, TrainPlan};
use crate::error::{Error, IoContext, Result};
use crate::losses::{Lambdas, LossBreakdown};
use crate::model::container::{params_from_container, read_container, write_container};
use crate::model::{init_parameters, ModelParams, Partition, Tensor};
use crate::parallel::Exec;
use crate::synth::{derive_seed, ClipSampler, Dataset, VideoRecord};

/// Per-step and per-epoch record of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub steps: Vec<LossBreakdown>,
    /// Validation loss (data terms) after each epoch.
    pub val_loss: Vec<f64>,
    /// Learning rates `(backbone, branches)` in effect after each epoch.
    pub lrs: Vec<(f64, f64)>,
}

fn data_total(b: &LossBreakdown) -> f64 {
    b.total - b.lambdas.decay * b.weight_decay
}

/// Mean data loss of the stage objective over non-overlapping clips.
pub fn validation_loss(
    params: &ModelParams,
    sampler: &ClipSampler<'_>,
    stage: &StageSpec,
    lambdas: Lambdas,
    batch_size: usize,
    exec: Exec,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut frames = 0usize;
    for chunk in sampler.clips().chunks(batch_size) {
        let batch = sampler.plain_batch(chunk)?;
        let e = evaluate_batch(params, &batch, lambdas, stage.active, stage.trainable(), exec)?;
        let n = batch.batch_size() * batch.clip_len();
        sum += data_total(&e.breakdown) * n as f64;
        frames += n;
    }
    Ok(sum / frames.max(1) as f64)
}

/// Runs the epochs of one stage, updating `params` in place.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    stage: &StageSpec,
    train: &ClipSampler<'_>,
    val: Option<&ClipSampler<'_>>,
    plan: &TrainPlan,
    lambdas: Lambdas,
    seed: u64,
    exec: Exec,
) -> Result<StageLog> {
    stage.validate()?;
    let trainable = stage.trainable();
    let mut tracker = PlateauTracker::new(plan.plateau);
    let mut log = StageLog {
        steps: Vec::new(),
        val_loss: Vec::new(),
        lrs: Vec::new(),
    };
    for epoch in 0..stage.epochs {
        let order = train.epoch_order(seed, epoch);
        let epoch_seed = derive_seed(seed, (1 << 32) + epoch as u64);
        for (k, chunk) in order.chunks(plan.batch_size).enumerate() {
            let batch = train.augmented_batch(chunk, derive_seed(epoch_seed, k as u64))?;
            let e = evaluate_batch(params, &batch, lambdas, stage.active, trainable, exec)?;
            if !e.breakdown.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "stage {}: non-finite loss at epoch {epoch}",
                    stage.name
                )));
            }
            sgd_step(params, &e.grads, opt, trainable)?;
            log.steps.push(e.breakdown);
        }
        if let Some(v) = val {
            let loss = validation_loss(params, v, stage, lambdas, plan.batch_size, exec)?;
            if tracker.observe(loss, opt) {
                log::info!(
                    "stage {} epoch {epoch}: validation plateau, lr now {:.2e}/{:.2e}",
                    stage.name,
                    opt.lr_backbone,
                    opt.lr_branches
                );
            }
            log.val_loss.push(loss);
        }
        log.lrs.push((opt.lr_backbone, opt.lr_branches));
        log::debug!(
            "stage {} epoch {epoch}: last loss {:.5}",
            stage.name,
            log.steps.last().map_or(f64::NAN, |b| b.total)
        );
    }
    Ok(log)
}

/// Writes weights plus optimizer velocities and learning rates.
pub fn save_checkpoint(path: &Path, params: &ModelParams, opt: &OptimizerState, meta: serde_json::Value) -> Result<()> {
    let mut arrays: Vec<(String, &Tensor)> = params.weights.named_tensors();
    for p in Partition::ALL {
        for (n, t) in opt.velocity.partition_tensors(p) {
            arrays.push((format!("optimizer/{}/{n}", p.name()), t));
        }
    }
    let mut meta = meta;
    meta["arch"] = serde_json::to_value(&params.config).expect("json");
    meta["optimizer"] = json!({
        "lr_backbone": opt.lr_backbone,
        "lr_branches": opt.lr_branches,
        "momentum": opt.momentum,
        "weight_decay": opt.weight_decay,
    });
    write_container(path, &meta, &arrays)
}

/// Loads the model parameters of a checkpoint (optimizer arrays are ignored).
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    params_from_container(&read_container(path)?)
}

/// Files and results of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: ModelParams,
    pub checkpoints: Vec<PathBuf>,
    pub logs: Vec<StageLog>,
    pub manifest: RunManifest,
}

/// Contents of `run_manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub strategy: String,
    pub plan: TrainPlan,
    pub seed: u64,
    pub init_seed: u64,
    pub stage_seeds: Vec<u64>,
    pub train_videos: Vec<String>,
    pub val_videos: Vec<String>,
    /// SHA-256 of the dataset manifest.
    pub dataset_hash: String,
    /// SHA-256 of `effective_config`.
    pub config_hash: String,
    pub effective_config: String,
    pub checkpoints: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Training and validation video split used by [`run_plan`]: the last
/// `val_videos` training videos are held out when enough remain.
pub fn train_val_split<'a>(dataset: &'a Dataset, val_videos: usize) -> (Vec<&'a VideoRecord>, Vec<&'a VideoRecord>) {
    let train = dataset.train();
    if val_videos == 0 || train.len() <= val_videos {
        return (train, Vec::new());
    }
    let k = train.len() - val_videos;
    (train[..k].to_vec(), train[k..].to_vec())
}

/// Executes every stage of the configured strategy, writing
/// `stage{k}.ckpt`, `steps.csv`, `epochs.csv` and `run_manifest.json`.
pub fn run_plan(cfg: &TrainConfig, dataset: &Dataset, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let plan = TrainPlan::from_config(cfg);
    let exec = Exec::from_deterministic(cfg.deterministic);
    let shape = dataset.manifest.frame_shape;
    if shape[0] != cfg.arch.channels {
        return Err(Error::config(format!(
            "dataset has {} channels, architecture expects {}",
            shape[0], cfg.arch.channels
        )));
    }
    let (train_videos, val_videos) = train_val_split(dataset, cfg.val_videos);
    let train = ClipSampler::new(train_videos.clone(), cfg.arch.clip_len, cfg.clip_stride, cfg.arch.frame_size)?;
    let val = if val_videos.is_empty() {
        None
    } else {
        Some(ClipSampler::new(
            val_videos.clone(),
            cfg.arch.clip_len,
            cfg.arch.clip_len,
            cfg.arch.frame_size,
        )?)
    };
    fs::create_dir_all(out_dir).at(out_dir)?;

    let effective_config = toml::to_string(cfg).map_err(|e| Error::config(e.to_string()))?;
    let init_seed = derive_seed(cfg.seed, 0xC0FFEE);
    let stage_seeds: Vec<u64> = (0..plan.stages.len())
        .map(|k| derive_seed(cfg.seed, k as u64 + 1))
        .collect();
    let ckpt_names: Vec<String> = (1..=plan.stages.len()).map(|k| format!("stage{k}.ckpt")).collect();
    let manifest = RunManifest {
        strategy: cfg.strategy.name().into(),
        plan: plan.clone(),
        seed: cfg.seed,
        init_seed,
        stage_seeds: stage_seeds.clone(),
        train_videos: train_videos.iter().map(|v| v.video_id.clone()).collect(),
        val_videos: val_videos.iter().map(|v| v.video_id.clone()).collect(),
        dataset_hash: sha256_hex(serde_json::to_string(&dataset.manifest).expect("json").as_bytes()),
        config_hash: sha256_hex(effective_config.as_bytes()),
        effective_config,
        checkpoints: ckpt_names.clone(),
    };
    let path = out_dir.join("run_manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json")).at(&path)?;

    let mut params = init_parameters(&cfg.arch, init_seed)?;
    let mut steps_csv = format!("{}\n", LossBreakdown::CSV_HEADER);
    let mut epochs_csv = String::from("stage,epoch,val_loss,lr_backbone,lr_branches\n");
    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut step = 0usize;
    for (k, stage) in plan.stages.iter().enumerate() {
        let mut opt = OptimizerState::new(&params, &cfg.optimizer);
        log::info!(
            "{}: stage {} ({}), {} epochs, trainable {:?}",
            cfg.strategy,
            k + 1,
            stage.name,
            stage.epochs,
            stage.trainable().iter().map(Partition::name).collect::<Vec<_>>()
        );
        let log = train_stage(
            &mut params,
            &mut opt,
            stage,
            &train,
            val.as_ref(),
            &plan,
            cfg.lambdas,
            stage_seeds[k],
            exec,
        )?;
        for b in &log.steps {
            steps_csv.push_str(&b.csv_row(step));
            steps_csv.push('\n');
            step += 1;
        }
        for (e, &(lb, lr)) in log.lrs.iter().enumerate() {
            let v = log.val_loss.get(e).map_or(String::new(), |v| v.to_string());
            let _ = writeln!(epochs_csv, "{},{e},{v},{lb},{lr}", k + 1);
        }
        let ckpt = out_dir.join(&ckpt_names[k]);
        save_checkpoint(
            &ckpt,
            &params,
            &opt,
            json!({ "strategy": cfg.strategy.name(), "stage": k + 1, "stage_name": stage.name }),
        )?;
        let p = out_dir.join("steps.csv");
        fs::write(&p, &steps_csv).at(&p)?;
        let p = out_dir.join("epochs.csv");
        fs::write(&p, &epochs_csv).at(&p)?;
        checkpoints.push(ckpt);
        logs.push(log);
    }
    Ok(RunOutcome {
        params,
        checkpoints,
        logs,
        manifest,
    })
}
