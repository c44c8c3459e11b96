//! Sliding-window clips and shuffled mini-batches.

use ndarray::{Array2, Array3, Array5};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::Augmentation;
use super::generate::{derive_seed, VideoRecord};
use crate::error::{Error, Result};
use crate::model::ClipBatch;

/// Start frames of every full window; the short tail is dropped.
pub fn clip_windows(len: usize, clip_len: usize, stride: usize) -> Result<Vec<usize>> {
    if clip_len == 0 || stride == 0 {
        return Err(Error::config("clip length and stride must be positive"));
    }
    if clip_len > len {
        return Ok(Vec::new());
    }
    Ok((0..=len - clip_len).step_by(stride).collect())
}

/// One clip per window, frames left at their stored size.
pub fn make_clips(video: &VideoRecord, clip_len: usize, stride: usize) -> Result<Vec<ClipBatch>> {
    let starts = clip_windows(video.len(), clip_len, stride)?;
    if starts.is_empty() {
        log::warn!(
            "{}: {} frames is shorter than clip length {clip_len}",
            video.video_id,
            video.len()
        );
    }
    let shape = video.frame_shape;
    let full = Augmentation {
        y0: 0,
        x0: 0,
        size: shape[1],
        mirror: false,
    };
    let refs: Vec<ClipRef> = starts.into_iter().map(|start| ClipRef { video: 0, start }).collect();
    refs.iter()
        .map(|r| assemble_batch(&[video], std::slice::from_ref(r), clip_len, |_| Ok(full)))
        .collect()
}

/// A clip identified by video position and start frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipRef {
    pub video: usize,
    pub start: usize,
}

fn assemble_batch(
    videos: &[&VideoRecord],
    refs: &[ClipRef],
    clip_len: usize,
    mut aug: impl FnMut(usize) -> Result<Augmentation>,
) -> Result<ClipBatch> {
    let b = refs.len();
    let shape = videos[refs[0].video].frame_shape;
    let tools = videos[refs[0].video].tool_labels.first().map_or(0, Vec::len);
    let first = aug(0)?;
    let s = first.size;
    let mut frames = Vec::with_capacity(b * clip_len * shape[0] * s * s);
    let mut tool_labels = Array3::zeros((b, clip_len, tools));
    let mut phase_labels = Array2::zeros((b, clip_len));
    for (i, r) in refs.iter().enumerate() {
        let v = videos[r.video];
        let a = if i == 0 { first } else { aug(i)? };
        for j in 0..clip_len {
            let t = r.start + j;
            frames.extend(a.apply(v.frame(t), shape).into_iter().map(f64::from));
            phase_labels[[i, j]] = v.phase_labels[t];
            for (c, &y) in v.tool_labels[t].iter().enumerate() {
                tool_labels[[i, j, c]] = y;
            }
        }
    }
    Ok(ClipBatch {
        frames: Array5::from_shape_vec((b, clip_len, shape[0], s, s), frames).expect("shape"),
        tool_labels,
        phase_labels,
        video_ids: refs.iter().map(|r| videos[r.video].video_id.clone()).collect(),
        start_frames: refs.iter().map(|r| r.start).collect(),
    })
}

/// Enumerates the clips of a video set and serves shuffled, augmented batches.
#[derive(Debug, Clone)]
pub struct ClipSampler<'a> {
    videos: Vec<&'a VideoRecord>,
    clips: Vec<ClipRef>,
    clip_len: usize,
    crop: usize,
}

impl<'a> ClipSampler<'a> {
    pub fn new(videos: Vec<&'a VideoRecord>, clip_len: usize, stride: usize, crop: usize) -> Result<Self> {
        let mut clips = Vec::new();
        for (k, v) in videos.iter().enumerate() {
            let starts = clip_windows(v.len(), clip_len, stride)?;
            if starts.is_empty() {
                log::warn!("{}: too short for clip length {clip_len}", v.video_id);
            }
            clips.extend(starts.into_iter().map(|start| ClipRef { video: k, start }));
        }
        if clips.is_empty() {
            return Err(Error::config(format!("no video is long enough for clip length {clip_len}")));
        }
        Ok(Self {
            videos,
            clips,
            clip_len,
            crop,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[ClipRef] {
        &self.clips
    }

    /// Clip order for one epoch.
    pub fn epoch_order(&self, seed: u64, epoch: usize) -> Vec<ClipRef> {
        let mut order = self.clips.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
        order.shuffle(&mut rng);
        order
    }

    /// Batch with a random crop and mirror per clip.
    pub fn augmented_batch(&self, refs: &[ClipRef], seed: u64) -> Result<ClipBatch> {
        assemble_batch(&self.videos, refs, self.clip_len, |i| {
            let v = self.videos[refs[i].video];
            Augmentation::random(v.frame_shape, self.crop, derive_seed(seed, i as u64))
        })
    }

    /// Batch with the centre crop and no mirror.
    pub fn plain_batch(&self, refs: &[ClipRef]) -> Result<ClipBatch> {
        assemble_batch(&self.videos, refs, self.clip_len, |i| {
            Augmentation::center(self.videos[refs[i].video].frame_shape, self.crop)
        })
    }
}
