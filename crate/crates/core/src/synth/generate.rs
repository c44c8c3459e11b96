//! Phase sequences, tool presence processes and frame rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::WorkflowSpec;
use crate::error::Result;

/// Number of image channels produced by [`render_frame`].
pub const CHANNELS: usize = 3;

/// Mixes a base seed with a stream index (splitmix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Phase label per frame: every phase once, in order, uniform durations.
pub fn generate_workflow(spec: &WorkflowSpec, seed: u64) -> Result<Vec<usize>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = Vec::new();
    for (z, &(lo, hi)) in spec.duration_range.iter().enumerate() {
        let d = rng.random_range(lo..=hi);
        seq.extend(std::iter::repeat_n(z, d));
    }
    Ok(seq)
}

/// Transition probabilities `(on -> off, off -> on)` of a two-state chain
/// with stationary presence `pi` and mean episode length `persistence`.
pub fn presence_rates(pi: f64, persistence: f64) -> (f64, f64) {
    if pi <= 0.0 {
        return (1.0, 0.0);
    }
    if pi >= 1.0 {
        return (0.0, 1.0);
    }
    let a = 1.0 / persistence;
    let b = pi * a / (1.0 - pi);
    if b > 1.0 {
        ((1.0 - pi) / pi, 1.0)
    } else {
        (a, b)
    }
}

/// Per-frame binary tool labels, `phase_seq.len() x num_tools`.
///
/// Each tool runs an independent two-state chain whose state is redrawn from
/// the stationary distribution at every phase start.
pub fn sample_tools(phase_seq: &[usize], spec: &WorkflowSpec, seed: u64) -> Result<Vec<Vec<u8>>> {
    spec.validate()?;
    if let Some(&z) = phase_seq.iter().find(|&&z| z >= spec.num_phases) {
        return Err(crate::Error::Label(format!("phase {z} outside 0..{}", spec.num_phases)));
    }
    let mut labels = vec![vec![0u8; spec.num_tools]; phase_seq.len()];
    for c in 0..spec.num_tools {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
        let mut on = false;
        for (t, &z) in phase_seq.iter().enumerate() {
            let pi = spec.tool_given_phase[c][z];
            if t == 0 || phase_seq[t - 1] != z {
                on = rng.random::<f64>() < pi;
            } else {
                let (a, b) = presence_rates(pi, spec.tool_persistence);
                let u = rng.random::<f64>();
                on = if on { u >= a } else { u < b };
            }
            labels[t][c] = on as u8;
        }
    }
    Ok(labels)
}

// Background colour per phase.
const PHASE_COLOURS: [[f64; 3]; 7] = [
    [0.9, 0.2, 0.2],
    [0.2, 0.9, 0.2],
    [0.2, 0.2, 0.9],
    [0.9, 0.9, 0.2],
    [0.9, 0.2, 0.9],
    [0.2, 0.9, 0.9],
    [0.9, 0.9, 0.9],
];

// Stripe orientation per phase: (dy, dx, period).
const PHASE_TEXTURES: [(i64, i64, i64); 7] = [
    (1, 0, 4),
    (0, 1, 4),
    (1, 1, 4),
    (1, -1, 4),
    (1, 0, 6),
    (0, 1, 6),
    (1, 1, 6),
];

// Glyph colour per tool.
const TOOL_COLOURS: [[f64; 3]; 7] = [
    [1.0, 1.0, 1.0],
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
];

// 3x3 glyph masks, row-major.
const TOOL_GLYPHS: [[u8; 9]; 7] = [
    [0, 1, 0, 1, 1, 1, 0, 1, 0],
    [1, 0, 1, 0, 1, 0, 1, 0, 1],
    [1, 1, 1, 0, 0, 0, 1, 1, 1],
    [1, 0, 0, 1, 0, 0, 1, 1, 1],
    [1, 1, 1, 1, 0, 1, 1, 1, 1],
    [0, 1, 0, 0, 1, 0, 0, 1, 0],
    [1, 1, 0, 1, 1, 0, 0, 0, 0],
];

/// Procedural `(3, S, S)` image for one frame, values around `[0, 1]`.
///
/// The phase selects a background colour and stripe texture; each present
/// tool stamps its glyph near a tool-specific anchor with a random offset,
/// unless it is occluded in this frame.
pub fn render_frame(phase: usize, tools: &[u8], spec: &WorkflowSpec, seed: u64) -> Vec<f32> {
    let s = spec.frame_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![0.0f64; CHANNELS * s * s];
    let colour = PHASE_COLOURS[phase % PHASE_COLOURS.len()];
    let (dy, dx, period) = PHASE_TEXTURES[phase % PHASE_TEXTURES.len()];
    let k = spec.background_contrast;
    let mut shift = [0.0; CHANNELS];
    if spec.illumination_jitter > 0.0 {
        let n = Normal::new(0.0, spec.illumination_jitter).expect("validated jitter");
        shift.iter_mut().for_each(|v| *v = n.sample(&mut rng));
    }
    for y in 0..s {
        for x in 0..s {
            let stripe = if (dy * y as i64 + dx * x as i64).rem_euclid(period) < period / 2 {
                0.5 * k
            } else {
                -0.5 * k
            };
            for ch in 0..CHANNELS {
                img[(ch * s + y) * s + x] = 0.5 + k * (colour[ch] - 0.5) + 0.5 * stripe + shift[ch];
            }
        }
    }
    // tool anchors on a 3x3 grid of cells inside the frame
    let cell = s / 3;
    for (c, &on) in tools.iter().enumerate() {
        let visible = rng.random::<f64>() < spec.tool_visibility;
        if on == 0 || !visible {
            continue;
        }
        let (gy, gx) = (c / 3, c % 3);
        let max_off = cell.saturating_sub(3);
        let oy = rng.random_range(0..=max_off);
        let ox = rng.random_range(0..=max_off);
        let (y0, x0) = (gy * cell + oy, gx * cell + ox);
        let glyph = &TOOL_GLYPHS[c % TOOL_GLYPHS.len()];
        let tc = TOOL_COLOURS[c % TOOL_COLOURS.len()];
        for gyy in 0..3 {
            for gxx in 0..3 {
                if glyph[gyy * 3 + gxx] == 0 {
                    continue;
                }
                let (y, x) = (y0 + gyy, x0 + gxx);
                if y >= s || x >= s {
                    continue;
                }
                for ch in 0..CHANNELS {
                    let px = &mut img[(ch * s + y) * s + x];
                    *px += spec.tool_contrast * (tc[ch] - *px);
                }
            }
        }
    }
    if spec.noise_level > 0.0 {
        let noise = Normal::new(0.0, spec.noise_level).expect("validated noise level");
        for px in img.iter_mut() {
            *px += noise.sample(&mut rng);
        }
    }
    img.into_iter().map(|v| v as f32).collect()
}

/// One generated or ingested video at 1 fps.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    /// Flat `(T, C, H, W)` pixels.
    pub frames: Vec<f32>,
    /// `(C, H, W)`.
    pub frame_shape: [usize; 3],
    pub phase_labels: Vec<usize>,
    pub tool_labels: Vec<Vec<u8>>,
}

impl VideoRecord {
    pub fn len(&self) -> usize {
        self.phase_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase_labels.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_shape.iter().product()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    /// Checks that labels and frames agree in length.
    pub fn validate(&self) -> Result<()> {
        let t = self.phase_labels.len();
        if self.tool_labels.len() != t || self.frames.len() != t * self.frame_len() {
            return Err(crate::Error::dim(format!(
                "{}: {} phase labels, {} tool rows, {} frames",
                self.video_id,
                t,
                self.tool_labels.len(),
                self.frames.len() / self.frame_len().max(1)
            )));
        }
        Ok(())
    }
}

/// Generates one full synthetic video.
pub fn generate_video(spec: &WorkflowSpec, video_id: &str, seed: u64) -> Result<VideoRecord> {
    let phases = generate_workflow(spec, derive_seed(seed, 0))?;
    let tools = sample_tools(&phases, spec, derive_seed(seed, 1))?;
    let render_seed = derive_seed(seed, 2);
    let mut frames = Vec::with_capacity(phases.len() * CHANNELS * spec.frame_size * spec.frame_size);
    for (t, (&z, y)) in phases.iter().zip(&tools).enumerate() {
        frames.extend(render_frame(z, y, spec, derive_seed(render_seed, t as u64)));
    }
    Ok(VideoRecord {
        video_id: video_id.to_string(),
        frames,
        frame_shape: [CHANNELS, spec.frame_size, spec.frame_size],
        phase_labels: phases,
        tool_labels: tools,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_durations() {
        let spec = WorkflowSpec {
            duration_range: vec![(5, 5); 7],
            ..Default::default()
        };
        let seq = generate_workflow(&spec, 3).unwrap();
        assert_eq!(seq.len(), 35);
        for (i, &z) in seq.iter().enumerate() {
            assert_eq!(z, i / 5);
        }
    }

    #[test]
    fn workflow_is_monotone_and_deterministic() {
        let spec = WorkflowSpec::default();
        let a = generate_workflow(&spec, 11).unwrap();
        assert_eq!(a, generate_workflow(&spec, 11).unwrap());
        assert!(a.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        assert_eq!(a[0], 0);
        assert_eq!(*a.last().unwrap(), 6);
    }

    #[test]
    fn mean_duration_near_midpoint() {
        let spec = WorkflowSpec::default();
        let mut sums = [0.0; 7];
        let runs = 1000;
        for seed in 0..runs {
            let seq = generate_workflow(&spec, seed).unwrap();
            for z in seq {
                sums[z] += 1.0;
            }
        }
        for (z, &(lo, hi)) in spec.duration_range.iter().enumerate() {
            let mid = (lo + hi) as f64 / 2.0;
            let mean = sums[z] / runs as f64;
            assert!((mean - mid).abs() < 0.05 * mid, "phase {z}: {mean} vs {mid}");
        }
    }

    #[test]
    fn certain_and_impossible_tools() {
        let mut spec = WorkflowSpec::default();
        for row in spec.tool_given_phase.iter_mut() {
            row.fill(0.0);
        }
        spec.tool_given_phase[2][3] = 1.0;
        let phases = generate_workflow(&spec, 1).unwrap();
        let tools = sample_tools(&phases, &spec, 2).unwrap();
        for (z, y) in phases.iter().zip(&tools) {
            for (c, &v) in y.iter().enumerate() {
                assert_eq!(v, (c == 2 && *z == 3) as u8);
            }
        }
    }

    #[test]
    fn rates_reproduce_stationary_probability() {
        for &pi in &[0.05, 0.3, 0.5, 0.8, 0.95] {
            let (a, b) = presence_rates(pi, 4.0);
            assert!((b / (a + b) - pi).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        }
        let (a, _) = presence_rates(0.3, 4.0);
        assert!((1.0 / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn render_is_deterministic_and_phase_dependent() {
        let spec = WorkflowSpec {
            noise_level: 0.0,
            ..Default::default()
        };
        let tools = [1, 0, 1, 0, 0, 0, 0];
        let a = render_frame(2, &tools, &spec, 9);
        assert_eq!(a, render_frame(2, &tools, &spec, 9));
        assert_ne!(a, render_frame(3, &tools, &spec, 9));
        assert_eq!(a.len(), 3 * spec.frame_size * spec.frame_size);
    }

    #[test]
    fn video_labels_match_frames() {
        let v = generate_video(&WorkflowSpec::default(), "video01", 5).unwrap();
        v.validate().unwrap();
        assert!(v.len() >= 7);
    }
}
