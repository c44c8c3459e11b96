//! Causal per-video inference and the predictions CSV.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::model::{ModelParams, OnlineSession};
use crate::parallel::{map_indexed, Exec};
use crate::synth::{Augmentation, VideoRecord};

use super::metrics::argmax;

/// Model output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub video_id: String,
    pub frame_idx: usize,
    pub phase_pred: usize,
    pub phase_probs: Vec<f64>,
    pub tool_probs: Vec<f64>,
}

/// Streams a video frame by frame through the model, carrying the recurrent
/// state across the whole video. Frames are centre-cropped to the model size.
pub fn predict_video(params: &ModelParams, video: &VideoRecord) -> Result<Vec<PredictionRecord>> {
    let crop = Augmentation::center(video.frame_shape, params.config.frame_size)?;
    let mut session = OnlineSession::new(params);
    (0..video.len())
        .map(|t| {
            let frame: Vec<f64> = crop
                .apply(video.frame(t), video.frame_shape)
                .into_iter()
                .map(f64::from)
                .collect();
            let out = session.push(&frame)?;
            Ok(PredictionRecord {
                video_id: video.video_id.clone(),
                frame_idx: t,
                phase_pred: argmax(&out.phase_probs),
                phase_probs: out.phase_probs,
                tool_probs: out.tool_probs,
            })
        })
        .collect()
}

/// Predictions for several videos, one video per task.
pub fn predict_videos(params: &ModelParams, videos: &[&VideoRecord], exec: Exec) -> Result<Vec<PredictionRecord>> {
    let per_video = map_indexed(videos, exec, |_, v| predict_video(params, v));
    let mut out = Vec::new();
    for r in per_video {
        out.extend(r?);
    }
    Ok(out)
}

/// `video_id,frame_idx,phase_pred,pp0..ppK,tp0..tpC`.
pub fn predictions_header(num_phases: usize, num_tools: usize) -> String {
    let mut h = vec!["video_id".to_string(), "frame_idx".into(), "phase_pred".into()];
    h.extend((0..num_phases).map(|k| format!("pp{k}")));
    h.extend((0..num_tools).map(|c| format!("tp{c}")));
    h.join(",")
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let (p, t) = records
        .first()
        .map_or((7, 7), |r| (r.phase_probs.len(), r.tool_probs.len()));
    let mut s = predictions_header(p, t);
    s.push('\n');
    for r in records {
        let mut cells = vec![r.video_id.clone(), r.frame_idx.to_string(), r.phase_pred.to_string()];
        cells.extend(r.phase_probs.iter().chain(&r.tool_probs).map(f64::to_string));
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s).at(path)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = fs::File::open(path).at(path)?;
    let mut rdr = csv::Reader::from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let np = headers.iter().filter(|h| h.starts_with("pp")).count();
    let nt = headers.iter().filter(|h| h.starts_with("tp")).count();
    if headers.iter().collect::<Vec<_>>().join(",") != predictions_header(np, nt) {
        return Err(parse_err(1, "unexpected predictions header".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad number {:?}", &rec[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad integer {:?}", &rec[i])))
        };
        let phase_probs = (3..3 + np).map(num).collect::<Result<Vec<_>>>()?;
        let tool_probs = (3 + np..3 + np + nt).map(num).collect::<Result<Vec<_>>>()?;
        out.push(PredictionRecord {
            video_id: rec[0].to_string(),
            frame_idx: int(1)?,
            phase_pred: int(2)?,
            phase_probs,
            tool_probs,
        });
    }
    Ok(out)
}
