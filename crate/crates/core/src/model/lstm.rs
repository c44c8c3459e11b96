//! Single-layer unidirectional LSTM of the phase branch.

use super::layers::sigmoid;
use super::params::PhaseHead;

/// Hidden and cell state for a batch, each `batch x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<Vec<f64>>,
    pub cell: Vec<Vec<f64>>,
}

impl RecurrentState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            hidden: vec![vec![0.0; hidden]; batch],
            cell: vec![vec![0.0; hidden]; batch],
        }
    }
}

/// Per-step values needed for back-propagation through time.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One recurrence step; updates `(h, c)` in place.
pub(crate) fn lstm_step(
    head: &PhaseHead,
    x: &[f64],
    h: &mut Vec<f64>,
    c: &mut Vec<f64>,
    keep_cache: bool,
) -> Option<StepCache> {
    let hd = head.hidden_dim();
    let fd = x.len();
    let wi = &head.w_input.data;
    let wh = &head.w_hidden.data;
    let mut z = head.bias.data.clone();
    for (r, zr) in z.iter_mut().enumerate() {
        let a: f64 = wi[r * fd..(r + 1) * fd].iter().zip(x).map(|(w, v)| w * v).sum();
        let b: f64 = wh[r * hd..(r + 1) * hd].iter().zip(h.iter()).map(|(w, v)| w * v).sum();
        *zr += a + b;
    }
    let i: Vec<f64> = z[..hd].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
    let c_new: Vec<f64> = (0..hd).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
    let cache = keep_cache.then(|| StepCache {
        x: x.to_vec(),
        h_prev: h.clone(),
        c_prev: c.clone(),
        i,
        f,
        g,
        o,
        tanh_c,
    });
    *h = h_new;
    *c = c_new;
    cache
}

/// Back-propagation through time over a cached sequence.
///
/// `dh_ext[t]` is the loss gradient arriving at `h_t` from layers above.
/// Returns `dL/dx_t` for every step and accumulates weight gradients.
pub(crate) fn lstm_backward(
    head: &PhaseHead,
    grad: &mut PhaseHead,
    steps: &[StepCache],
    dh_ext: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let hd = head.hidden_dim();
    let fd = steps.first().map_or(0, |s| s.x.len());
    let wi = &head.w_input.data;
    let wh = &head.w_hidden.data;
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dxs = vec![Vec::new(); steps.len()];
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let mut dz = vec![0.0; 4 * hd];
        for k in 0..hd {
            let dh = dh_ext[t][k] + dh_next[k];
            let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_o = dh * s.tanh_c[k];
            let d_i = dc * s.g[k];
            let d_g = dc * s.i[k];
            let d_f = dc * s.c_prev[k];
            dc_next[k] = dc * s.f[k];
            dz[k] = d_i * s.i[k] * (1.0 - s.i[k]);
            dz[hd + k] = d_f * s.f[k] * (1.0 - s.f[k]);
            dz[2 * hd + k] = d_g * (1.0 - s.g[k] * s.g[k]);
            dz[3 * hd + k] = d_o * s.o[k] * (1.0 - s.o[k]);
        }
        let mut dx = vec![0.0; fd];
        let mut dh_prev = vec![0.0; hd];
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias.data[r] += d;
            let gi = &mut grad.w_input.data[r * fd..(r + 1) * fd];
            let wir = &wi[r * fd..(r + 1) * fd];
            for j in 0..fd {
                gi[j] += d * s.x[j];
                dx[j] += d * wir[j];
            }
            let gh = &mut grad.w_hidden.data[r * hd..(r + 1) * hd];
            let whr = &wh[r * hd..(r + 1) * hd];
            for j in 0..hd {
                gh[j] += d * s.h_prev[j];
                dh_prev[j] += d * whr[j];
            }
        }
        dh_next = dh_prev;
        dxs[t] = dx;
    }
    dxs
}
