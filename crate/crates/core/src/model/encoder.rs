//! Shared convolutional encoder applied to each frame independently.

use super::config::{ArchConfig, EncoderBlock};
use super::layers::{conv_backward, conv_forward, Dims};
use super::params::{Backbone, EncoderLayer};

#[derive(Debug, Clone)]
enum LayerCache {
    Conv {
        input: Vec<f64>,
        in_dims: Dims,
        out: Vec<f64>,
        out_dims: Dims,
        stride: usize,
    },
    Residual {
        input: Vec<f64>,
        dims: Dims,
        mid: Vec<f64>,
        out: Vec<f64>,
    },
}

/// Activations kept for the backward pass of one frame.
#[derive(Debug, Clone)]
pub(crate) struct FrameCache {
    layers: Vec<LayerCache>,
    proj_in: Vec<f64>,
    proj_in_dims: Dims,
    proj_out: Vec<f64>,
    proj_dims: Dims,
}

fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn strides(config: &ArchConfig) -> impl Iterator<Item = usize> + '_ {
    config.encoder.iter().map(|b| match *b {
        EncoderBlock::Conv { stride, .. } => stride,
        EncoderBlock::Residual { .. } => 1,
    })
}

/// Encodes one `[C, H, W]` frame into a feature vector `g`.
pub(crate) fn encode_frame(
    backbone: &Backbone,
    config: &ArchConfig,
    frame: &[f64],
    keep_cache: bool,
) -> (Vec<f64>, Option<FrameCache>) {
    let (mean, inv_std) = (config.input_mean, 1.0 / config.input_std);
    let mut x: Vec<f64> = frame.iter().map(|v| (v - mean) * inv_std).collect();
    let mut dims = Dims {
        c: config.channels,
        h: config.frame_size,
        w: config.frame_size,
    };
    let mut caches = Vec::new();
    for (layer, stride) in backbone.layers.iter().zip(strides(config)) {
        match layer {
            EncoderLayer::Conv(conv) => {
                let (mut y, od) = conv_forward(conv, &x, dims, stride);
                relu_inplace(&mut y);
                if keep_cache {
                    caches.push(LayerCache::Conv {
                        input: std::mem::take(&mut x),
                        in_dims: dims,
                        out: y.clone(),
                        out_dims: od,
                        stride,
                    });
                }
                x = y;
                dims = od;
            }
            EncoderLayer::Residual(a, b) => {
                let (mut mid, _) = conv_forward(a, &x, dims, 1);
                relu_inplace(&mut mid);
                let (mut y, _) = conv_forward(b, &mid, dims, 1);
                for (o, i) in y.iter_mut().zip(&x) {
                    *o += i;
                }
                relu_inplace(&mut y);
                if keep_cache {
                    caches.push(LayerCache::Residual {
                        input: std::mem::take(&mut x),
                        dims,
                        mid,
                        out: y.clone(),
                    });
                }
                x = y;
            }
        }
    }
    let (mut p, pd) = conv_forward(&backbone.proj, &x, dims, 1);
    relu_inplace(&mut p);
    let area = (pd.h * pd.w) as f64;
    let g: Vec<f64> = p
        .chunks(pd.h * pd.w)
        .map(|ch| ch.iter().sum::<f64>() / area)
        .collect();
    let cache = keep_cache.then(|| FrameCache {
        layers: caches,
        proj_in: x,
        proj_in_dims: dims,
        proj_out: p,
        proj_dims: pd,
    });
    (g, cache)
}

impl FrameCache {
    /// Sign of every ReLU pre-activation (`true` where the unit is active).
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for lc in &self.layers {
            match lc {
                LayerCache::Conv { out: o, .. } => out.extend(o.iter().map(|&v| v > 0.0)),
                LayerCache::Residual { mid, out: o, .. } => {
                    out.extend(mid.iter().map(|&v| v > 0.0));
                    out.extend(o.iter().map(|&v| v > 0.0));
                }
            }
        }
        out.extend(self.proj_out.iter().map(|&v| v > 0.0));
        out
    }
}

/// Accumulates backbone gradients for one frame given `dL/dg`.
pub(crate) fn encode_frame_backward(
    backbone: &Backbone,
    grad: &mut Backbone,
    cache: &FrameCache,
    dg: &[f64],
) {
    let pd = cache.proj_dims;
    let area = pd.h * pd.w;
    let mut dp = vec![0.0; pd.len()];
    for c in 0..pd.c {
        let d = dg[c] / area as f64;
        for i in 0..area {
            let idx = c * area + i;
            if cache.proj_out[idx] > 0.0 {
                dp[idx] = d;
            }
        }
    }
    let mut dx = conv_backward(
        &backbone.proj,
        &mut grad.proj,
        &cache.proj_in,
        cache.proj_in_dims,
        1,
        &dp,
        pd,
    );
    for (i, lc) in cache.layers.iter().enumerate().rev() {
        match (lc, &backbone.layers[i], &mut grad.layers[i]) {
            (
                LayerCache::Conv {
                    input,
                    in_dims,
                    out,
                    out_dims,
                    stride,
                },
                EncoderLayer::Conv(conv),
                EncoderLayer::Conv(gconv),
            ) => {
                for (d, o) in dx.iter_mut().zip(out) {
                    if *o <= 0.0 {
                        *d = 0.0;
                    }
                }
                if i == 0 {
                    // input pixels need no gradient; only accumulate weights
                    conv_backward(conv, gconv, input, *in_dims, *stride, &dx, *out_dims);
                    return;
                }
                dx = conv_backward(conv, gconv, input, *in_dims, *stride, &dx, *out_dims);
            }
            (
                LayerCache::Residual {
                    input,
                    dims,
                    mid,
                    out,
                },
                EncoderLayer::Residual(a, b),
                EncoderLayer::Residual(ga, gb),
            ) => {
                for (d, o) in dx.iter_mut().zip(out) {
                    if *o <= 0.0 {
                        *d = 0.0;
                    }
                }
                let mut dmid = conv_backward(b, gb, mid, *dims, 1, &dx, *dims);
                for (d, m) in dmid.iter_mut().zip(mid) {
                    if *m <= 0.0 {
                        *d = 0.0;
                    }
                }
                let dskip = conv_backward(a, ga, input, *dims, 1, &dmid, *dims);
                for (d, s) in dx.iter_mut().zip(dskip) {
                    *d += s;
                }
            }
            _ => unreachable!("cache and weights disagree on layer {i}"),
        }
    }
}
