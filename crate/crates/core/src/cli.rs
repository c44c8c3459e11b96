//! Command-line front end: `gen-data`, `train`, `predict`, `eval`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::eval::{
    evaluate_records, image, predict_videos, read_predictions, write_predictions, write_report,
    EvalReport, VideoTruth,
};
use crate::parallel::Exec;
use crate::synth::{generate_dataset, load_dataset, GenerateOptions, WorkflowSpec};
use crate::training::{load_checkpoint, run_plan, Strategy, TrainConfig};

/// Contents of a `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workflow: WorkflowSpec,
    pub dataset: GenerateOptions,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_toml(&fs::read_to_string(p).at(p)?),
            None => Ok(Self::default()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mtrc", version, about = "Joint surgical tool presence and phase recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a model with one of the staged strategies.
    Train(TrainArgs),
    /// Stream the test videos through a checkpoint.
    Predict(PredictArgs),
    /// Score predictions and write reports and images.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with [workflow], [dataset] and [train] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the selected command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub num_videos: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// three_step, TS1, TS2, single_tool, single_phase or mtrcnet_no_cl.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub clip_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Predictions CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    if let Some(s) = args.common.seed {
        cfg.dataset.seed = s;
    }
    if let Some(n) = args.num_videos {
        cfg.dataset.num_videos = n;
    }
    let exec = Exec::from_deterministic(args.common.deterministic);
    let ds = generate_dataset(&cfg.workflow, &cfg.dataset, &args.out, exec)?;
    log::info!(
        "wrote {} videos ({} train, {} test) to {}",
        ds.videos.len(),
        ds.manifest.split.train_videos.len(),
        ds.manifest.split.test_videos.len(),
        args.out.display()
    );
    Ok(())
}

/// Effective training config after applying command-line overrides.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?.train;
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse::<Strategy>()?;
    }
    if let Some(n) = args.clip_len {
        cfg.arch.clip_len = n;
    }
    cfg.deterministic |= args.common.deterministic;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = train_config(args)?;
    let ds = load_dataset(&args.data)?;
    let out = run_plan(&cfg, &ds, &args.out)?;
    for ck in &out.checkpoints {
        log::info!("checkpoint {}", ck.display());
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    let exec = Exec::from_deterministic(args.common.deterministic);
    let preds = predict_videos(&params, &ds.test(), exec)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    write_predictions(&args.out, &preds)?;
    log::info!("wrote {} predictions to {}", preds.len(), args.out.display());
    Ok(())
}

/// Writes heat maps and per-video ribbons for a report.
pub fn write_images(report: &EvalReport, truth: &[VideoTruth], preds: &[crate::eval::PredictionRecord], dir: &Path) -> Result<()> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).at(&img_dir)?;
    image::heatmap(&report.confusion.normalized, 16).write_ppm(&img_dir.join("confusion.ppm"))?;
    image::heatmap(&report.cooccurrence_gt.normalized, 16).write_ppm(&img_dir.join("cooccurrence_gt.ppm"))?;
    image::heatmap(&report.cooccurrence_pred.normalized, 16).write_ppm(&img_dir.join("cooccurrence_pred.ppm"))?;
    image::heatmap(&report.cooccurrence_diff, 16).write_ppm(&img_dir.join("cooccurrence_diff.ppm"))?;
    for v in truth {
        let mut rows: Vec<&crate::eval::PredictionRecord> =
            preds.iter().filter(|p| p.video_id == v.video_id).collect();
        rows.sort_by_key(|p| p.frame_idx);
        let phases: Vec<usize> = rows.iter().map(|p| p.phase_pred).collect();
        let tools: Vec<Vec<u8>> = rows
            .iter()
            .map(|p| p.tool_probs.iter().map(|&q| (q >= 0.5) as u8).collect())
            .collect();
        let id = &v.video_id;
        image::phase_ribbon(&v.phases, 2, 12).write_ppm(&img_dir.join(format!("{id}_phase_gt.ppm")))?;
        image::phase_ribbon(&phases, 2, 12).write_ppm(&img_dir.join(format!("{id}_phase_pred.ppm")))?;
        image::tool_ribbon(&v.tools, 2, 4).write_ppm(&img_dir.join(format!("{id}_tool_gt.ppm")))?;
        image::tool_ribbon(&tools, 2, 4).write_ppm(&img_dir.join(format!("{id}_tool_pred.ppm")))?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let preds = read_predictions(&args.predictions)?;
    let ds = load_dataset(&args.data)?;
    let truth: Vec<VideoTruth> = ds.test().into_iter().map(VideoTruth::from).collect();
    let report = evaluate_records(&preds, &truth)?;
    write_report(&report, &args.out)?;
    write_images(&report, &truth, &preds, &args.out)?;
    println!(
        "accuracy {:.4} ± {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}  mAP {:.4}",
        report.accuracy_mean, report.accuracy_std, report.mean_precision, report.mean_recall, report.f1, report.map
    );
    Ok(report)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Alignment { missing, .. } = &e {
                for (v, t) in missing {
                    eprintln!("missing prediction: {v} frame {t}");
                }
            }
            e.exit_code()
        }
    }
}
