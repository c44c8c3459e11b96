//! Per-sample primitive layers and their backward passes.

use super::config::conv_out_size;
use super::params::{Conv, Linear};

pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Derivative mask of the clamp at the unclamped value.
#[inline]
pub(crate) fn clamp_pass(p: f64) -> f64 {
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Back-propagates `d_probs` through `clamp(softmax(z))` given the unclamped
/// softmax output.
pub(crate) fn softmax_clamped_backward(raw: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let masked: Vec<f64> = d_probs
        .iter()
        .zip(raw)
        .map(|(d, p)| d * clamp_pass(*p))
        .collect();
    let dot: f64 = masked.iter().zip(raw).map(|(d, p)| d * p).sum();
    raw.iter().zip(&masked).map(|(p, d)| p * (d - dot)).collect()
}

/// Back-propagates through `clamp(sigmoid(z))` given the unclamped output.
#[inline]
pub(crate) fn sigmoid_clamped_backward(raw: f64, d_prob: f64) -> f64 {
    d_prob * clamp_pass(raw) * raw * (1.0 - raw)
}

pub fn linear_forward(l: &Linear, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (l.outputs(), l.inputs());
    debug_assert_eq!(x.len(), inp);
    let w = &l.weight.data;
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            l.bias.data[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Accumulates weight/bias gradients into `grad` and returns `dL/dx`.
pub(crate) fn linear_backward(l: &Linear, grad: &mut Linear, x: &[f64], dy: &[f64]) -> Vec<f64> {
    let inp = l.inputs();
    let mut dx = vec![0.0; inp];
    for (o, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.bias.data[o] += d;
        let row = &l.weight.data[o * inp..(o + 1) * inp];
        let grow = &mut grad.weight.data[o * inp..(o + 1) * inp];
        for i in 0..inp {
            grow[i] += d * x[i];
            dx[i] += d * row[i];
        }
    }
    dx
}

/// Shape of a `[C, H, W]` activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Zero-padded ("same") convolution, no activation.
pub(crate) fn conv_forward(conv: &Conv, x: &[f64], dims: Dims, stride: usize) -> (Vec<f64>, Dims) {
    let k = conv.kernel();
    let pad = k / 2;
    let co = conv.out_channels();
    let ci = conv.in_channels();
    debug_assert_eq!(ci, dims.c);
    let ho = conv_out_size(dims.h, k, stride);
    let wo = conv_out_size(dims.w, k, stride);
    let w = &conv.weight.data;
    let mut out = vec![0.0; co * ho * wo];
    for oc in 0..co {
        let b = conv.bias.data[oc];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b;
                for ic in 0..ci {
                    let xbase = ic * dims.h * dims.w;
                    let wbase = (oc * ci + ic) * k * k;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= dims.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * dims.w;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= dims.w as isize {
                                continue;
                            }
                            acc += w[wrow + kx] * x[xrow + ix as usize];
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (out, Dims { c: co, h: ho, w: wo })
}

/// Accumulates parameter gradients and returns `dL/dx`.
pub(crate) fn conv_backward(
    conv: &Conv,
    grad: &mut Conv,
    x: &[f64],
    dims: Dims,
    stride: usize,
    dy: &[f64],
    out: Dims,
) -> Vec<f64> {
    let k = conv.kernel();
    let pad = k / 2;
    let ci = conv.in_channels();
    let w = &conv.weight.data;
    let mut dx = vec![0.0; dims.len()];
    for oc in 0..out.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let d = dy[(oc * out.h + oy) * out.w + ox];
                if d == 0.0 {
                    continue;
                }
                grad.bias.data[oc] += d;
                for ic in 0..ci {
                    let xbase = ic * dims.h * dims.w;
                    let wbase = (oc * ci + ic) * k * k;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= dims.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * dims.w;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= dims.w as isize {
                                continue;
                            }
                            let xi = xrow + ix as usize;
                            grad.weight.data[wrow + kx] += d * x[xi];
                            dx[xi] += d * w[wrow + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Tensor;

    #[test]
    fn sigmoid_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1.0, 2.0, -3.0, 1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_kernel() {
        // 1 -> 1 channel, 3x3 kernel with a centre tap of 1.
        let mut weight = Tensor::zeros(&[1, 1, 3, 3]);
        weight.data[4] = 1.0;
        let conv = Conv {
            weight,
            bias: Tensor::zeros(&[1]),
        };
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let dims = Dims { c: 1, h: 4, w: 4 };
        let (y, od) = conv_forward(&conv, &x, dims, 1);
        assert_eq!(od, dims);
        assert_eq!(y, x);
        let (y2, od2) = conv_forward(&conv, &x, dims, 2);
        assert_eq!(od2, Dims { c: 1, h: 2, w: 2 });
        assert_eq!(y2, vec![0.0, 2.0, 8.0, 10.0]);
    }
}
