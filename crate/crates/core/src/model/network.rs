//! Joint forward pass and its backward pass.

use ndarray::{s, Array2, Array3, Array5, ArrayView3, ArrayView5};

use super::encoder::{encode_frame, encode_frame_backward, FrameCache};
use super::layers::{
    clamp_prob, linear_backward, linear_forward, sigmoid, sigmoid_clamped_backward, softmax,
    softmax_clamped_backward,
};
use super::lstm::{lstm_backward, lstm_step, RecurrentState, StepCache};
use super::params::{MappingCell, ModelParams, PhaseHead, ToolHead, Weights};
use super::MappingSource;
use crate::error::{Error, Result};
use crate::parallel::{map_range, Exec};

/// Fixed-length frame sequences with per-frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBatch {
    /// `(batch, N_f, C, H, W)`, values in `[0, 1]`.
    pub frames: Array5<f64>,
    /// `(batch, N_f, tools)`, entries 0 or 1.
    pub tool_labels: Array3<u8>,
    /// `(batch, N_f)`.
    pub phase_labels: Array2<usize>,
    pub video_ids: Vec<String>,
    pub start_frames: Vec<usize>,
}

impl ClipBatch {
    pub fn batch_size(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn clip_len(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn validate(&self, num_tools: usize, num_phases: usize) -> Result<()> {
        let (b, n) = (self.batch_size(), self.clip_len());
        if n == 0 {
            return Err(Error::dim("clip length must be at least 1"));
        }
        if self.tool_labels.shape() != [b, n, num_tools] {
            return Err(Error::dim(format!(
                "tool labels have shape {:?}, expected {:?}",
                self.tool_labels.shape(),
                [b, n, num_tools]
            )));
        }
        if self.phase_labels.shape() != [b, n] {
            return Err(Error::dim("phase labels do not match frame batch"));
        }
        if self.video_ids.len() != b || self.start_frames.len() != b {
            return Err(Error::dim("clip metadata does not match batch size"));
        }
        if self.tool_labels.iter().any(|&y| y > 1) {
            return Err(Error::Label("tool labels must be 0 or 1".into()));
        }
        if let Some(bad) = self.phase_labels.iter().find(|&&y| y >= num_phases) {
            return Err(Error::Label(format!(
                "phase label {bad} outside 0..{num_phases}"
            )));
        }
        Ok(())
    }
}

/// Outputs of both branches and the mapping cell.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrediction {
    pub tool_probs: Array3<f64>,
    pub phase_probs: Array3<f64>,
    pub phase_features: Array3<f64>,
    pub tool_priors: Array3<f64>,
    /// Phase priors from the tool branch (mutual mapping only).
    pub phase_priors: Option<Array3<f64>>,
}

fn check_frames(frames: &ArrayView5<f64>, params: &ModelParams) -> Result<()> {
    let c = &params.config;
    let sh = frames.shape();
    if sh[2] != c.channels || sh[3] != c.frame_size || sh[4] != c.frame_size {
        return Err(Error::dim(format!(
            "frames have shape {:?}, expected (_, _, {}, {}, {})",
            sh, c.channels, c.frame_size, c.frame_size
        )));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite pixel value".into()));
    }
    Ok(())
}

/// Per-frame shared features, shape `(batch, N_f, feature_dim)`.
pub fn encode_frames(frames: ArrayView5<f64>, params: &ModelParams, exec: Exec) -> Result<Array3<f64>> {
    check_frames(&frames, params)?;
    let (b, n) = (frames.shape()[0], frames.shape()[1]);
    let fd = params.config.feature_dim;
    let frames = frames.as_standard_layout();
    let flat = frames.as_slice().expect("standard layout");
    let len = params.config.frame_len();
    let feats = map_range(b * n, exec, |i| {
        encode_frame(&params.weights.backbone, &params.config, &flat[i * len..(i + 1) * len], false).0
    });
    Ok(Array3::from_shape_vec((b, n, fd), feats.concat()).expect("shape"))
}

fn check_features(features: &ArrayView3<f64>, dim: usize, what: &str) -> Result<()> {
    if features.shape()[2] != dim {
        return Err(Error::dim(format!(
            "{what}: feature width {} but weights expect {dim}",
            features.shape()[2]
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what}: non-finite feature")));
    }
    Ok(())
}

fn tool_probs_of(head: &ToolHead, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = linear_forward(&head.fc, g).into_iter().map(sigmoid).collect();
    (raw.iter().map(|&p| clamp_prob(p)).collect(), raw)
}

/// Frame-wise affine map plus sigmoid, clamped to `[1e-7, 1 - 1e-7]`.
pub fn tool_head_forward(features: ArrayView3<f64>, head: &ToolHead) -> Result<Array3<f64>> {
    check_features(&features, head.fc.inputs(), "tool head")?;
    let (b, n, _) = features.dim();
    let t = head.fc.outputs();
    let mut out = Array3::zeros((b, n, t));
    for i in 0..b {
        for j in 0..n {
            let g = features.slice(s![i, j, ..]).to_vec();
            let (p, _) = tool_probs_of(head, &g);
            out.slice_mut(s![i, j, ..]).assign(&ndarray::ArrayView1::from(&p));
        }
    }
    Ok(out)
}

/// Runs the recurrence over every clip in the batch starting from `state0`.
///
/// Returns `(phase_probs, phase_features, final_state)`.
pub fn phase_head_forward(
    features: ArrayView3<f64>,
    state0: &RecurrentState,
    head: &PhaseHead,
) -> Result<(Array3<f64>, Array3<f64>, RecurrentState)> {
    check_features(&features, head.w_input.shape[1], "phase head")?;
    let (b, n, _) = features.dim();
    let hd = head.hidden_dim();
    if state0.hidden.len() != b
        || state0.cell.len() != b
        || state0.hidden.iter().chain(&state0.cell).any(|v| v.len() != hd)
    {
        return Err(Error::dim(format!(
            "recurrent state does not match batch {b} x hidden {hd}"
        )));
    }
    let p = head.classifier.outputs();
    let mut probs = Array3::zeros((b, n, p));
    let mut feats = Array3::zeros((b, n, hd));
    let mut state = state0.clone();
    for i in 0..b {
        let (h, c) = (&mut state.hidden[i], &mut state.cell[i]);
        for j in 0..n {
            let g = features.slice(s![i, j, ..]).to_vec();
            lstm_step(head, &g, h, c, false);
            let raw = softmax(&linear_forward(&head.classifier, h));
            for (k, v) in raw.iter().enumerate() {
                probs[[i, j, k]] = clamp_prob(*v);
            }
            feats.slice_mut(s![i, j, ..]).assign(&ndarray::ArrayView1::from(&h[..]));
        }
    }
    Ok((probs, feats, state))
}

/// Tool priors `sigmoid(M r_t + b)` for every frame.
pub fn map_phase_features(r: ArrayView3<f64>, mapping: &MappingCell) -> Result<Array3<f64>> {
    let m = &mapping.to_tools;
    if r.shape()[2] != m.inputs() {
        return Err(Error::dim(format!(
            "mapping cell expects input width {}, got {}",
            m.inputs(),
            r.shape()[2]
        )));
    }
    let (b, n, _) = r.dim();
    let mut out = Array3::zeros((b, n, m.outputs()));
    for i in 0..b {
        for j in 0..n {
            let x = r.slice(s![i, j, ..]).to_vec();
            for (k, z) in linear_forward(m, &x).into_iter().enumerate() {
                out[[i, j, k]] = clamp_prob(sigmoid(z));
            }
        }
    }
    Ok(out)
}

/// Outputs and caches of a single clip.
#[derive(Debug, Clone)]
pub(crate) struct ClipTrace {
    pub tool_probs: Vec<Vec<f64>>,
    pub phase_probs: Vec<Vec<f64>>,
    pub phase_features: Vec<Vec<f64>>,
    pub tool_priors: Vec<Vec<f64>>,
    pub phase_priors: Option<Vec<Vec<f64>>>,
    tool_raw: Vec<Vec<f64>>,
    phase_raw: Vec<Vec<f64>>,
    prior_raw: Vec<Vec<f64>>,
    phase_prior_raw: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    mapping_inputs: Vec<Vec<f64>>,
    frame_caches: Vec<FrameCache>,
    steps: Vec<StepCache>,
}

/// Per-frame prediction of the streaming model.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub tool_probs: Vec<f64>,
    pub phase_probs: Vec<f64>,
    pub phase_features: Vec<f64>,
    pub tool_priors: Vec<f64>,
}

/// Causal frame-by-frame inference with the recurrent state carried along.
pub struct OnlineSession<'a> {
    params: &'a ModelParams,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> OnlineSession<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let hd = params.config.phase_feature_dim;
        Self {
            params,
            h: vec![0.0; hd],
            c: vec![0.0; hd],
        }
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<FrameOutput> {
        let cfg = &self.params.config;
        if frame.len() != cfg.frame_len() {
            return Err(Error::dim(format!(
                "frame has {} values, expected {}",
                frame.len(),
                cfg.frame_len()
            )));
        }
        let w = &self.params.weights;
        let (g, _) = encode_frame(&w.backbone, cfg, frame, false);
        let (tool_probs, _) = tool_probs_of(&w.tool_head, &g);
        lstm_step(&w.phase_head, &g, &mut self.h, &mut self.c, false);
        let phase_raw = softmax(&linear_forward(&w.phase_head.classifier, &self.h));
        let phase_probs: Vec<f64> = phase_raw.iter().map(|&p| clamp_prob(p)).collect();
        let map_in = match cfg.mapping_source {
            MappingSource::PhaseFeatures => &self.h,
            MappingSource::PhaseLabels => &phase_probs,
        };
        let tool_priors = linear_forward(&w.mapping_cell.to_tools, map_in)
            .into_iter()
            .map(|z| clamp_prob(sigmoid(z)))
            .collect();
        Ok(FrameOutput {
            tool_probs,
            phase_probs,
            phase_features: self.h.clone(),
            tool_priors,
        })
    }
}

/// Forward pass over one clip (`n` frames, flat `[n, C, H, W]`), zero state.
pub(crate) fn clip_forward(params: &ModelParams, frames: &[f64], keep_cache: bool) -> ClipTrace {
    let cfg = &params.config;
    let w = &params.weights;
    let len = cfg.frame_len();
    let n = frames.len() / len;
    let hd = cfg.phase_feature_dim;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];

    let mut tr = ClipTrace {
        tool_probs: Vec::with_capacity(n),
        phase_probs: Vec::with_capacity(n),
        phase_features: Vec::with_capacity(n),
        tool_priors: Vec::with_capacity(n),
        phase_priors: w.mapping_cell.to_phases.as_ref().map(|_| Vec::with_capacity(n)),
        tool_raw: Vec::new(),
        phase_raw: Vec::new(),
        prior_raw: Vec::new(),
        phase_prior_raw: Vec::new(),
        features: Vec::new(),
        mapping_inputs: Vec::new(),
        frame_caches: Vec::new(),
        steps: Vec::new(),
    };

    for t in 0..n {
        let (g, fc) = encode_frame(&w.backbone, cfg, &frames[t * len..(t + 1) * len], keep_cache);
        let (tp, traw) = tool_probs_of(&w.tool_head, &g);
        let sc = lstm_step(&w.phase_head, &g, &mut h, &mut c, keep_cache);
        let praw = softmax(&linear_forward(&w.phase_head.classifier, &h));
        let pp: Vec<f64> = praw.iter().map(|&p| clamp_prob(p)).collect();
        let map_in = match cfg.mapping_source {
            MappingSource::PhaseFeatures => h.clone(),
            MappingSource::PhaseLabels => pp.clone(),
        };
        let mraw: Vec<f64> = linear_forward(&w.mapping_cell.to_tools, &map_in)
            .into_iter()
            .map(sigmoid)
            .collect();
        tr.tool_priors.push(mraw.iter().map(|&p| clamp_prob(p)).collect());
        if let (Some(m2), Some(out)) = (&w.mapping_cell.to_phases, tr.phase_priors.as_mut()) {
            let qraw = softmax(&linear_forward(m2, &tp));
            out.push(qraw.iter().map(|&p| clamp_prob(p)).collect());
            if keep_cache {
                tr.phase_prior_raw.push(qraw);
            }
        }
        tr.tool_probs.push(tp);
        tr.phase_probs.push(pp);
        tr.phase_features.push(h.clone());
        if keep_cache {
            tr.tool_raw.push(traw);
            tr.phase_raw.push(praw);
            tr.prior_raw.push(mraw);
            tr.features.push(g);
            tr.mapping_inputs.push(map_in);
            tr.frame_caches.push(fc.expect("cache"));
            tr.steps.push(sc.expect("cache"));
        }
    }
    tr
}

/// Loss gradients with respect to the clip outputs, one row per frame.
#[derive(Debug, Clone)]
pub(crate) struct OutputGrads {
    pub tool_probs: Vec<Vec<f64>>,
    pub phase_probs: Vec<Vec<f64>>,
    pub tool_priors: Vec<Vec<f64>>,
    pub phase_priors: Vec<Vec<f64>>,
}

impl OutputGrads {
    pub fn zeros(n: usize, tools: usize, phases: usize) -> Self {
        Self {
            tool_probs: vec![vec![0.0; tools]; n],
            phase_probs: vec![vec![0.0; phases]; n],
            tool_priors: vec![vec![0.0; tools]; n],
            phase_priors: vec![vec![0.0; phases]; n],
        }
    }
}

fn is_zero(rows: &[Vec<f64>]) -> bool {
    rows.iter().all(|r| r.iter().all(|&v| v == 0.0))
}

/// Accumulates parameter gradients of one clip into `grad`.
///
/// The backbone backward pass is skipped when `with_backbone` is false.
pub(crate) fn clip_backward(
    params: &ModelParams,
    trace: &ClipTrace,
    mut dout: OutputGrads,
    with_backbone: bool,
    grad: &mut Weights,
) {
    let cfg = &params.config;
    let w = &params.weights;
    let n = trace.features.len();
    let hd = cfg.phase_feature_dim;

    // phase priors from tool probabilities (mutual mapping)
    if let Some(m2) = &w.mapping_cell.to_phases {
        let g2 = grad.mapping_cell.to_phases.as_mut().expect("grad layout");
        for t in 0..n {
            if dout.phase_priors[t].iter().all(|&v| v == 0.0) {
                continue;
            }
            let dz = softmax_clamped_backward(&trace.phase_prior_raw[t], &dout.phase_priors[t]);
            let dtp = linear_backward(m2, g2, &trace.tool_probs[t], &dz);
            for (a, b) in dout.tool_probs[t].iter_mut().zip(dtp) {
                *a += b;
            }
        }
    }

    // tool priors from the mapping cell
    let mut dh_ext = vec![vec![0.0; hd]; n];
    for t in 0..n {
        if dout.tool_priors[t].iter().all(|&v| v == 0.0) {
            continue;
        }
        let dz: Vec<f64> = trace.prior_raw[t]
            .iter()
            .zip(&dout.tool_priors[t])
            .map(|(&r, &d)| sigmoid_clamped_backward(r, d))
            .collect();
        let din = linear_backward(
            &w.mapping_cell.to_tools,
            &mut grad.mapping_cell.to_tools,
            &trace.mapping_inputs[t],
            &dz,
        );
        let target = match cfg.mapping_source {
            MappingSource::PhaseFeatures => &mut dh_ext[t],
            MappingSource::PhaseLabels => &mut dout.phase_probs[t],
        };
        for (a, b) in target.iter_mut().zip(din) {
            *a += b;
        }
    }

    let mut dg = vec![vec![0.0; cfg.feature_dim]; n];

    // tool branch
    if !is_zero(&dout.tool_probs) {
        for t in 0..n {
            let dz: Vec<f64> = trace.tool_raw[t]
                .iter()
                .zip(&dout.tool_probs[t])
                .map(|(&r, &d)| sigmoid_clamped_backward(r, d))
                .collect();
            let d = linear_backward(&w.tool_head.fc, &mut grad.tool_head.fc, &trace.features[t], &dz);
            for (a, b) in dg[t].iter_mut().zip(d) {
                *a += b;
            }
        }
    }

    // phase branch
    let phase_active = !is_zero(&dout.phase_probs) || !is_zero(&dh_ext);
    if phase_active {
        for t in 0..n {
            if dout.phase_probs[t].iter().all(|&v| v == 0.0) {
                continue;
            }
            let dz = softmax_clamped_backward(&trace.phase_raw[t], &dout.phase_probs[t]);
            let dh = linear_backward(
                &w.phase_head.classifier,
                &mut grad.phase_head.classifier,
                &trace.phase_features[t],
                &dz,
            );
            for (a, b) in dh_ext[t].iter_mut().zip(dh) {
                *a += b;
            }
        }
        let dx = lstm_backward(&w.phase_head, &mut grad.phase_head, &trace.steps, &dh_ext);
        for (a, b) in dg.iter_mut().zip(dx) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    if with_backbone {
        for t in 0..n {
            if dg[t].iter().any(|&v| v != 0.0) {
                encode_frame_backward(&w.backbone, &mut grad.backbone, &trace.frame_caches[t], &dg[t]);
            }
        }
    }
}

/// ReLU activation pattern of the encoder over every frame of a batch.
///
/// Central differences are only meaningful when the perturbation does not
/// flip any entry of this pattern; gradient checks use it to detect kinks.
pub fn relu_pattern(frames: ArrayView5<f64>, params: &ModelParams) -> Result<Vec<bool>> {
    check_frames(&frames, params)?;
    let frames = frames.as_standard_layout();
    let flat = frames.as_slice().expect("standard layout");
    let len = params.config.frame_len();
    Ok(flat
        .chunks(len)
        .flat_map(|f| {
            let (_, cache) = encode_frame(&params.weights.backbone, &params.config, f, true);
            cache.expect("cache").relu_pattern()
        })
        .collect())
}

fn rows_to_array(rows: &[Vec<Vec<f64>>], width: usize) -> Array3<f64> {
    let (b, n) = (rows.len(), rows.first().map_or(0, |r| r.len()));
    let flat: Vec<f64> = rows.iter().flatten().flatten().copied().collect();
    Array3::from_shape_vec((b, n, width), flat).expect("shape")
}

/// Joint forward pass over a batch; clips are evaluated independently.
pub fn forward(clip: &ClipBatch, params: &ModelParams) -> Result<JointPrediction> {
    forward_with(clip, params, Exec::Parallel)
}

pub fn forward_with(clip: &ClipBatch, params: &ModelParams, exec: Exec) -> Result<JointPrediction> {
    let cfg = &params.config;
    clip.validate(cfg.num_tools, cfg.num_phases)?;
    check_frames(&clip.frames.view(), params)?;
    let traces = batch_traces(&clip.frames.view(), params, exec, false);
    Ok(assemble(&traces, params))
}

pub(crate) fn batch_traces(
    frames: &ArrayView5<f64>,
    params: &ModelParams,
    exec: Exec,
    keep_cache: bool,
) -> Vec<ClipTrace> {
    let frames = frames.as_standard_layout();
    let flat = frames.as_slice().expect("standard layout");
    let b = frames.shape()[0];
    let per_clip = flat.len() / b.max(1);
    map_range(b, exec, |i| {
        clip_forward(params, &flat[i * per_clip..(i + 1) * per_clip], keep_cache)
    })
}

pub(crate) fn assemble(traces: &[ClipTrace], params: &ModelParams) -> JointPrediction {
    let cfg = &params.config;
    let collect = |f: fn(&ClipTrace) -> &Vec<Vec<f64>>| -> Vec<Vec<Vec<f64>>> {
        traces.iter().map(|t| f(t).clone()).collect()
    };
    JointPrediction {
        tool_probs: rows_to_array(&collect(|t| &t.tool_probs), cfg.num_tools),
        phase_probs: rows_to_array(&collect(|t| &t.phase_probs), cfg.num_phases),
        phase_features: rows_to_array(&collect(|t| &t.phase_features), cfg.phase_feature_dim),
        tool_priors: rows_to_array(&collect(|t| &t.tool_priors), cfg.num_tools),
        phase_priors: cfg.mutual_mapping.then(|| {
            let rows: Vec<Vec<Vec<f64>>> = traces
                .iter()
                .map(|t| t.phase_priors.clone().expect("mutual mapping"))
                .collect();
            rows_to_array(&rows, cfg.num_phases)
        }),
    }
}
