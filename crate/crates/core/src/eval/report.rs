//! Full evaluation of a prediction set against ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{
    confusion_matrix, cooccurrence_counts, cooccurrence_diff, f1, mean_average_precision,
    mean_defined, phase_pr_re, video_accuracy, CountMatrix,
};
use super::predict::PredictionRecord;
use crate::error::{Error, IoContext, Result};
use crate::synth::VideoRecord;

/// Ground-truth labels of one video at 1 fps.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTruth {
    pub video_id: String,
    pub phases: Vec<usize>,
    pub tools: Vec<Vec<u8>>,
}

impl From<&VideoRecord> for VideoTruth {
    fn from(v: &VideoRecord) -> Self {
        Self {
            video_id: v.video_id.clone(),
            phases: v.phase_labels.clone(),
            tools: v.tool_labels.clone(),
        }
    }
}

/// Precision, recall and F1 computed over all frames at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledScores {
    pub per_phase_precision: Vec<Option<f64>>,
    pub per_phase_recall: Vec<Option<f64>>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub accuracy: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_videos: usize,
    pub num_frames: usize,
    /// Per-phase precision averaged over the videos where it is defined.
    pub per_phase_precision: Vec<Option<f64>>,
    pub per_phase_recall: Vec<Option<f64>>,
    pub mean_precision: f64,
    pub mean_precision_std: f64,
    pub mean_recall: f64,
    pub mean_recall_std: f64,
    pub f1: f64,
    pub per_video: Vec<VideoScore>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub per_tool_ap: Vec<Option<f64>>,
    pub map: f64,
    pub pooled: PooledScores,
    /// Rows are ground-truth phases.
    pub confusion: CountMatrix,
    pub cooccurrence_gt: CountMatrix,
    pub cooccurrence_pred: CountMatrix,
    pub cooccurrence_diff: Vec<Vec<f64>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Evaluates predictions against ground truth.
///
/// Every ground-truth frame needs exactly one prediction; missing pairs are
/// reported in an alignment error. Predictions for other videos are ignored.
/// Videos are aggregated in sorted id order.
pub fn evaluate_records(preds: &[PredictionRecord], truth: &[VideoTruth]) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::config("no ground-truth videos to evaluate"));
    }
    let num_phases = preds.first().map_or(7, |p| p.phase_probs.len());
    let num_tools = truth
        .iter()
        .find_map(|t| t.tools.first())
        .map_or(7, Vec::len);
    let mut index: BTreeMap<(&str, usize), &PredictionRecord> = BTreeMap::new();
    for p in preds {
        if index.insert((p.video_id.as_str(), p.frame_idx), p).is_some() {
            return Err(Error::Alignment {
                msg: format!("duplicate prediction for {} frame {}", p.video_id, p.frame_idx),
                missing: Vec::new(),
            });
        }
    }
    let mut sorted: Vec<&VideoTruth> = truth.iter().collect();
    sorted.sort_by(|a, b| a.video_id.cmp(&b.video_id));

    let mut missing = Vec::new();
    let mut aligned: Vec<(&VideoTruth, Vec<&PredictionRecord>)> = Vec::new();
    for v in &sorted {
        let mut rows = Vec::with_capacity(v.phases.len());
        for t in 0..v.phases.len() {
            match index.get(&(v.video_id.as_str(), t)) {
                Some(p) => rows.push(*p),
                None => missing.push((v.video_id.clone(), t)),
            }
        }
        aligned.push((v, rows));
    }
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(10).map(|(v, t)| format!("{v}:{t}")).collect();
        return Err(Error::Alignment {
            msg: format!("{} annotated frames lack predictions (first: {})", missing.len(), shown.join(", ")),
            missing,
        });
    }
    for (_, rows) in &aligned {
        for p in rows {
            if p.phase_probs.len() != num_phases || p.tool_probs.len() != num_tools {
                return Err(Error::dim(format!(
                    "{} frame {}: prediction width does not match",
                    p.video_id, p.frame_idx
                )));
            }
        }
    }

    let mut per_video = Vec::new();
    let mut pr_lists = vec![Vec::new(); num_phases];
    let mut re_lists = vec![Vec::new(); num_phases];
    let (mut all_gt, mut all_pred) = (Vec::new(), Vec::new());
    let mut tool_scores = vec![Vec::new(); num_tools];
    let mut tool_labels = vec![Vec::new(); num_tools];
    let mut gt_tools = Vec::new();
    let mut pred_tools = Vec::new();
    for (v, rows) in &aligned {
        let pred: Vec<usize> = rows.iter().map(|p| p.phase_pred).collect();
        let scores = phase_pr_re(&v.phases, &pred, num_phases)?;
        if let Some(acc) = video_accuracy(&v.phases, &pred)? {
            per_video.push(VideoScore {
                video_id: v.video_id.clone(),
                accuracy: acc,
                mean_precision: scores.mean_precision,
                mean_recall: scores.mean_recall,
            });
            for k in 0..num_phases {
                pr_lists[k].push(scores.precision[k]);
                re_lists[k].push(scores.recall[k]);
            }
        }
        all_gt.extend_from_slice(&v.phases);
        all_pred.extend_from_slice(&pred);
        for (p, y) in rows.iter().zip(&v.tools) {
            for c in 0..num_tools {
                tool_scores[c].push(p.tool_probs[c]);
                tool_labels[c].push(y[c]);
            }
            pred_tools.push(p.tool_probs.iter().map(|&q| (q >= 0.5) as u8).collect::<Vec<u8>>());
        }
        gt_tools.extend(v.tools.iter().cloned());
    }

    let (accuracy_mean, accuracy_std) = mean_std(&per_video.iter().map(|v| v.accuracy).collect::<Vec<_>>());
    let (mean_precision, mean_precision_std) =
        mean_std(&per_video.iter().map(|v| v.mean_precision).collect::<Vec<_>>());
    let (mean_recall, mean_recall_std) = mean_std(&per_video.iter().map(|v| v.mean_recall).collect::<Vec<_>>());
    let (per_tool_ap, map) = mean_average_precision(&tool_scores, &tool_labels)?;
    let pooled_scores = phase_pr_re(&all_gt, &all_pred, num_phases)?;
    let pooled = PooledScores {
        f1: f1(pooled_scores.mean_precision, pooled_scores.mean_recall),
        per_phase_precision: pooled_scores.precision,
        per_phase_recall: pooled_scores.recall,
        mean_precision: pooled_scores.mean_precision,
        mean_recall: pooled_scores.mean_recall,
    };
    let gt_counts = cooccurrence_counts(&all_gt, &gt_tools, num_tools, num_phases)?;
    let pred_counts = cooccurrence_counts(&all_pred, &pred_tools, num_tools, num_phases)?;
    Ok(EvalReport {
        num_videos: per_video.len(),
        num_frames: all_gt.len(),
        per_phase_precision: pr_lists.iter().map(|l| mean_defined(l)).collect(),
        per_phase_recall: re_lists.iter().map(|l| mean_defined(l)).collect(),
        mean_precision,
        mean_precision_std,
        mean_recall,
        mean_recall_std,
        f1: f1(mean_precision, mean_recall),
        per_video,
        accuracy_mean,
        accuracy_std,
        per_tool_ap,
        map,
        pooled,
        confusion: confusion_matrix(&all_gt, &all_pred, num_phases)?,
        cooccurrence_diff: cooccurrence_diff(&gt_counts, &pred_counts)?,
        cooccurrence_gt: CountMatrix::from_counts(gt_counts),
        cooccurrence_pred: CountMatrix::from_counts(pred_counts),
    })
}

/// Reads a predictions file and scores it against the test videos of a
/// dataset directory.
pub fn evaluate_run(predictions: &Path, dataset_dir: &Path) -> Result<EvalReport> {
    let preds = super::predict::read_predictions(predictions)?;
    let ds = crate::synth::load_dataset(dataset_dir)?;
    let truth: Vec<VideoTruth> = ds.test().into_iter().map(VideoTruth::from).collect();
    evaluate_records(&preds, &truth)
}

fn matrix_csv(m: &[Vec<f64>], row_names: &[String], col_names: &[String]) -> String {
    let mut s = format!("row,{}\n", col_names.join(","));
    for (name, row) in row_names.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        s.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    s
}

/// Parses a matrix written by [`write_report`].
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).at(path)?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            line.split(',')
                .skip(1)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: i as u64 + 1,
                        msg: format!("bad number {v:?}"),
                    })
                })
                .collect()
        })
        .collect()
}

/// Writes `report.json` plus one CSV per matrix into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let p = dir.join("report.json");
    fs::write(&p, serde_json::to_string_pretty(report).expect("json")).at(&p)?;
    let np = report.confusion.normalized.len();
    let nt = report.cooccurrence_gt.normalized.len() - 1;
    let phases: Vec<String> = crate::synth::PHASE_NAMES.iter().take(np).map(|s| s.to_string()).collect();
    let mut tools: Vec<String> = crate::synth::TOOL_NAMES.iter().take(nt).map(|s| s.to_string()).collect();
    tools.push("NoTool".into());
    for (name, m, rows) in [
        ("confusion.csv", &report.confusion.normalized, &phases),
        ("cooccurrence_gt.csv", &report.cooccurrence_gt.normalized, &tools),
        ("cooccurrence_pred.csv", &report.cooccurrence_pred.normalized, &tools),
        ("cooccurrence_diff.csv", &report.cooccurrence_diff, &tools),
    ] {
        let p = dir.join(name);
        fs::write(&p, matrix_csv(m, rows, &phases)).at(&p)?;
    }
    Ok(())
}
