//! Random crop and horizontal mirror, shared by every frame of a clip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Crop offset and mirror decision for one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub y0: usize,
    pub x0: usize,
    pub size: usize,
    pub mirror: bool,
}

impl Augmentation {
    fn check(size: usize, shape: [usize; 3]) -> Result<()> {
        if size == 0 || size > shape[1] || size > shape[2] {
            return Err(Error::config(format!(
                "crop size {size} does not fit frames of {}x{}",
                shape[1], shape[2]
            )));
        }
        Ok(())
    }

    /// Uniform crop offset and a fair-coin mirror.
    pub fn random(shape: [usize; 3], size: usize, seed: u64) -> Result<Self> {
        Self::check(size, shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            y0: rng.random_range(0..=shape[1] - size),
            x0: rng.random_range(0..=shape[2] - size),
            size,
            mirror: rng.random_bool(0.5),
        })
    }

    /// Centre crop without mirroring, used at evaluation time.
    pub fn center(shape: [usize; 3], size: usize) -> Result<Self> {
        Self::check(size, shape)?;
        Ok(Self {
            y0: (shape[1] - size) / 2,
            x0: (shape[2] - size) / 2,
            size,
            mirror: false,
        })
    }

    pub fn apply(&self, frame: &[f32], shape: [usize; 3]) -> Vec<f32> {
        crop_frame(frame, shape, self)
    }
}

/// Crops a `(C, H, W)` frame and optionally mirrors it left to right.
pub fn crop_frame(frame: &[f32], shape: [usize; 3], aug: &Augmentation) -> Vec<f32> {
    let [c, h, w] = shape;
    debug_assert_eq!(frame.len(), c * h * w);
    let s = aug.size;
    let mut out = Vec::with_capacity(c * s * s);
    for ch in 0..c {
        for y in 0..s {
            let row = &frame[(ch * h + aug.y0 + y) * w + aug.x0..][..s];
            if aug.mirror {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
    }
    out
}

/// Horizontal mirror of a `(C, H, W)` frame.
pub fn mirror_frame(frame: &[f32], shape: [usize; 3]) -> Vec<f32> {
    let aug = Augmentation {
        y0: 0,
        x0: 0,
        size: shape[1].min(shape[2]),
        mirror: true,
    };
    assert_eq!(shape[1], shape[2], "mirror_frame expects square frames");
    crop_frame(frame, shape, &aug)
}

/// Applies one random augmentation to every frame of a clip.
pub fn augment_clip(frames: &[&[f32]], shape: [usize; 3], crop: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
    let aug = Augmentation::random(shape, crop, seed)?;
    Ok(frames.iter().map(|f| aug.apply(f, shape)).collect())
}
