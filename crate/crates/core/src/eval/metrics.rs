//! Phase and tool metrics, confusion and co-occurrence matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Alignment {
            msg: format!("{what}: {a} ground-truth frames but {b} predictions"),
            missing: Vec::new(),
        });
    }
    Ok(())
}

/// Per-phase precision and recall of one video; `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseScores {
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    /// Mean over phases with a defined precision.
    pub mean_precision: f64,
    /// Mean over phases with a defined recall.
    pub mean_recall: f64,
}

pub(crate) fn mean_defined(xs: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `PR = |GT ∩ P| / |P|` and `RE = |GT ∩ P| / |GT|` per phase.
pub fn phase_pr_re(gt: &[usize], pred: &[usize], num_phases: usize) -> Result<PhaseScores> {
    check_len(gt.len(), pred.len(), "phase_pr_re")?;
    let mut inter = vec![0usize; num_phases];
    let mut n_gt = vec![0usize; num_phases];
    let mut n_pred = vec![0usize; num_phases];
    for (&g, &p) in gt.iter().zip(pred) {
        if g >= num_phases || p >= num_phases {
            return Err(Error::Label(format!("phase label outside 0..{num_phases}")));
        }
        n_gt[g] += 1;
        n_pred[p] += 1;
        if g == p {
            inter[g] += 1;
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let precision: Vec<_> = (0..num_phases).map(|k| ratio(inter[k], n_pred[k])).collect();
    let recall: Vec<_> = (0..num_phases).map(|k| ratio(inter[k], n_gt[k])).collect();
    Ok(PhaseScores {
        mean_precision: mean_defined(&precision).unwrap_or(0.0),
        mean_recall: mean_defined(&recall).unwrap_or(0.0),
        precision,
        recall,
    })
}

/// Fraction of correctly classified frames; `None` for an empty video.
pub fn video_accuracy(gt: &[usize], pred: &[usize]) -> Result<Option<f64>> {
    check_len(gt.len(), pred.len(), "video_accuracy")?;
    if gt.is_empty() {
        log::warn!("empty video excluded from accuracy");
        return Ok(None);
    }
    let correct = gt.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(Some(correct as f64 / gt.len() as f64))
}

/// Mean of precision@k over the ranks k of the positives, ranking frames by
/// descending score with ties broken by ascending index. `None` without
/// positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check_len(labels.len(), scores.len(), "average_precision")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

/// Per-tool AP over pooled frames and their mean over tools with positives.
///
/// `scores[c][i]` and `labels[c][i]` index tool `c`, frame `i`.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<(Vec<Option<f64>>, f64)> {
    check_len(labels.len(), scores.len(), "mean_average_precision")?;
    let aps = scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(c, (s, y))| {
            let ap = average_precision(s, y)?;
            if ap.is_none() {
                log::warn!("tool {c} has no positive frame; excluded from mAP");
            }
            Ok(ap)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((aps.clone(), mean_defined(&aps).unwrap_or(0.0)))
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Row-normalised matrix with the raw counts it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub counts: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
    /// Rows without any count; they stay all-zero.
    pub empty_rows: Vec<usize>,
}

impl CountMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let mut empty_rows = Vec::new();
        let normalized = counts
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let total: u64 = row.iter().sum();
                if total == 0 {
                    empty_rows.push(r);
                    vec![0.0; row.len()]
                } else {
                    row.iter().map(|&c| c as f64 / total as f64).collect()
                }
            })
            .collect();
        Self {
            counts,
            normalized,
            empty_rows,
        }
    }
}

/// Rows are ground-truth phases, columns predicted phases.
pub fn confusion_matrix(gt: &[usize], pred: &[usize], num_phases: usize) -> Result<CountMatrix> {
    check_len(gt.len(), pred.len(), "confusion_matrix")?;
    let mut counts = vec![vec![0u64; num_phases]; num_phases];
    for (&g, &p) in gt.iter().zip(pred) {
        if g >= num_phases || p >= num_phases {
            return Err(Error::Label(format!("phase label outside 0..{num_phases}")));
        }
        counts[g][p] += 1;
    }
    Ok(CountMatrix::from_counts(counts))
}

/// `(tools + 1) x phases` counts: row `c` counts frames of each phase where
/// tool `c` is present, the last row counts frames with no tool at all.
pub fn cooccurrence_counts(phases: &[usize], tools: &[Vec<u8>], num_tools: usize, num_phases: usize) -> Result<Vec<Vec<u64>>> {
    check_len(phases.len(), tools.len(), "cooccurrence")?;
    let mut counts = vec![vec![0u64; num_phases]; num_tools + 1];
    for (&z, y) in phases.iter().zip(tools) {
        if z >= num_phases || y.len() != num_tools {
            return Err(Error::Label("co-occurrence input out of range".into()));
        }
        let mut any = false;
        for (c, &v) in y.iter().enumerate() {
            if v == 1 {
                counts[c][z] += 1;
                any = true;
            }
        }
        if !any {
            counts[num_tools][z] += 1;
        }
    }
    Ok(counts)
}

/// Row-normalised co-occurrence matrix.
pub fn cooccurrence_matrix(phases: &[usize], tools: &[Vec<u8>], num_tools: usize, num_phases: usize) -> Result<CountMatrix> {
    Ok(CountMatrix::from_counts(cooccurrence_counts(phases, tools, num_tools, num_phases)?))
}

/// `|gt - pred|` per cell, min-max normalised to `[0, 1]`.
pub fn cooccurrence_diff(gt: &[Vec<u64>], pred: &[Vec<u64>]) -> Result<Vec<Vec<f64>>> {
    if gt.len() != pred.len() || gt.iter().zip(pred).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::dim("co-occurrence count matrices differ in shape"));
    }
    let diff: Vec<Vec<f64>> = gt
        .iter()
        .zip(pred)
        .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).collect())
        .collect();
    let flat = diff.iter().flatten();
    let lo = flat.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = flat.copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(diff.iter().map(|r| vec![0.0; r.len()]).collect());
    }
    Ok(diff
        .iter()
        .map(|r| r.iter().map(|v| (v - lo) / (hi - lo)).collect())
        .collect())
}

/// Mean absolute difference between two equally shaped matrices.
pub fn mean_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (sum, n) = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold((0.0, 0usize), |(s, n), (x, y)| (s + (x - y).abs(), n + 1));
    sum / n.max(1) as f64
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
