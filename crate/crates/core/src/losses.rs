//! Tool, phase and correlation losses and the combined objective.
//!
//! Every batch-level loss sums over classes within a frame and averages over
//! all frames of all clips. Probabilities are clamped to `[1e-7, 1 - 1e-7]`
//! before any logarithm.

use ndarray::{ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{layers::clamp_prob, PartitionSet, Weights};

/// Loss weights `(λ1, λ2, λ3)` for the phase, correlation and weight-decay terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambdas {
    pub phase: f64,
    pub correlation: f64,
    pub decay: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            phase: 1.0,
            correlation: 0.5,
            decay: 5e-4,
        }
    }
}

impl Lambdas {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("phase", self.phase),
            ("correlation", self.correlation),
            ("decay", self.decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("lambda {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveTerms {
    pub tool: bool,
    pub phase: bool,
    pub correlation: bool,
    /// Tool loss applied to the mapped priors; supervises the mapping cell alone.
    pub mapped_tool: bool,
}

impl ActiveTerms {
    pub const JOINT: ActiveTerms = ActiveTerms {
        tool: true,
        phase: true,
        correlation: false,
        mapped_tool: false,
    };
    pub const FULL: ActiveTerms = ActiveTerms {
        tool: true,
        phase: true,
        correlation: true,
        mapped_tool: false,
    };
    pub const MAPPING_ONLY: ActiveTerms = ActiveTerms {
        tool: false,
        phase: false,
        correlation: false,
        mapped_tool: true,
    };
    pub const TOOL_ONLY: ActiveTerms = ActiveTerms {
        tool: true,
        phase: false,
        correlation: false,
        mapped_tool: false,
    };
    pub const PHASE_ONLY: ActiveTerms = ActiveTerms {
        tool: false,
        phase: true,
        correlation: false,
        mapped_tool: false,
    };

    /// Compact label such as `T+P+CO`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.tool {
            parts.push("T");
        }
        if self.phase {
            parts.push("P");
        }
        if self.correlation {
            parts.push("CO");
        }
        if self.mapped_tool {
            parts.push("M");
        }
        parts.join("+")
    }
}

/// Raw (unweighted) loss values measured on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub tool: f64,
    pub phase: f64,
    pub correlation: f64,
    pub mapped_tool: f64,
    /// Squared L2 norm of the trainable weights.
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub tool_loss: f64,
    pub phase_loss: f64,
    pub correlation_loss: f64,
    pub mapped_tool_loss: f64,
    pub weight_decay: f64,
    pub total: f64,
    pub lambdas: Lambdas,
    pub active: ActiveTerms,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str =
        "step,tool_loss,phase_loss,correlation_loss,weight_decay,total,mapped_tool_loss,active";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{},{},{}",
            self.tool_loss,
            self.phase_loss,
            self.correlation_loss,
            self.weight_decay,
            self.total,
            self.mapped_tool_loss,
            self.active.label()
        )
    }
}

fn check_prob(p: f64, what: &str) -> Result<f64> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Numeric(format!("{what} = {p} is not a probability")));
    }
    Ok(clamp_prob(p))
}

/// `ln(1 + x) - x`, accurate for small `x`.
fn log1p_minus(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // alternating series, converged well below f64 resolution by k = 10
        let mut term = x;
        let mut sum = 0.0;
        for k in 2..=12 {
            term *= -x;
            sum += term / k as f64;
        }
        sum
    } else {
        x.ln_1p() - x
    }
}

/// KL divergence between two-outcome distributions `[p, 1-p]` and `[q, 1-q]`.
///
/// Written as `d²/(q(1-q)) + p·φ(d/q) + (1-p)·φ(-d/(1-q))` with `d = p - q`
/// and `φ(x) = ln(1+x) - x`, which avoids cancellation when `p ≈ q`.
pub fn bernoulli_kl(p: f64, q: f64) -> Result<f64> {
    let p = check_prob(p, "p")?;
    let q = check_prob(q, "q")?;
    Ok(bernoulli_kl_unchecked(p, q))
}

pub(crate) fn bernoulli_kl_unchecked(p: f64, q: f64) -> f64 {
    let d = p - q;
    let a = d / q;
    let b = -d / (1.0 - q);
    let kl = d * d / (q * (1.0 - q)) + p * log1p_minus(a) + (1.0 - p) * log1p_minus(b);
    kl.max(0.0)
}

/// `∂KL(p‖q)/∂p` and `∂KL(p‖q)/∂q`.
fn bernoulli_kl_grad(p: f64, q: f64) -> (f64, f64) {
    let dp = (p / q).ln() - ((1.0 - p) / (1.0 - q)).ln();
    let dq = -p / q + (1.0 - p) / (1.0 - q);
    (dp, dq)
}

/// Multi-label logistic loss of one frame, summed over tools.
pub fn tool_loss_frame(probs: &[f64], labels: &[u8]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

fn tool_loss_frame_grad(probs: &[f64], labels: &[u8], scale: f64, out: &mut [f64]) {
    for ((o, &p), &y) in out.iter_mut().zip(probs).zip(labels) {
        let p = clamp_prob(p);
        *o += scale * if y == 1 { -1.0 / p } else { 1.0 / (1.0 - p) };
    }
}

/// Bidirectional correlation loss of one frame, summed over tools.
pub fn correlation_loss_frame(tool: &[f64], prior: &[f64]) -> f64 {
    tool.iter()
        .zip(prior)
        .map(|(&a, &b)| {
            let (a, b) = (clamp_prob(a), clamp_prob(b));
            0.5 * bernoulli_kl_unchecked(a, b) + 0.5 * bernoulli_kl_unchecked(b, a)
        })
        .sum()
}

fn correlation_loss_frame_grad(tool: &[f64], prior: &[f64], scale: f64, d_tool: &mut [f64], d_prior: &mut [f64]) {
    for c in 0..tool.len() {
        let (a, b) = (clamp_prob(tool[c]), clamp_prob(prior[c]));
        let (da1, db1) = bernoulli_kl_grad(a, b);
        let (db2, da2) = bernoulli_kl_grad(b, a);
        d_tool[c] += scale * 0.5 * (da1 + da2);
        d_prior[c] += scale * 0.5 * (db1 + db2);
    }
}

/// Symmetrised categorical KL between two distributions over phases.
pub fn symmetric_categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (clamp_prob(a), clamp_prob(b));
            0.5 * (a - b) * (a / b).ln()
        })
        .sum()
}

fn symmetric_categorical_kl_grad(p: &[f64], q: &[f64], scale: f64, dp: &mut [f64], dq: &mut [f64]) {
    for k in 0..p.len() {
        let (a, b) = (clamp_prob(p[k]), clamp_prob(q[k]));
        // 0.5 (a - b)(ln a - ln b)
        let l = (a / b).ln();
        dp[k] += scale * 0.5 * (l + (a - b) / a);
        dq[k] += scale * 0.5 * (-l - (a - b) / b);
    }
}

fn check_same(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{what}: shape {a:?} vs {b:?}")));
    }
    Ok(())
}

fn frames_of(shape: &[usize]) -> usize {
    shape[0] * shape[1]
}

/// Tool loss averaged over frames and clips.
pub fn tool_loss(probs: ArrayView3<f64>, labels: ArrayView3<u8>) -> Result<f64> {
    check_same(probs.shape(), labels.shape(), "tool loss")?;
    let (b, n, _) = probs.dim();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..n {
            let p = probs.slice(ndarray::s![i, j, ..]).to_vec();
            let y = labels.slice(ndarray::s![i, j, ..]).to_vec();
            total += tool_loss_frame(&p, &y);
        }
    }
    Ok(total / frames_of(probs.shape()).max(1) as f64)
}

/// Phase cross-entropy averaged over frames and clips.
pub fn phase_loss(probs: ArrayView3<f64>, labels: ArrayView2<usize>) -> Result<f64> {
    let (b, n, k) = probs.dim();
    check_same(&[b, n], labels.shape(), "phase loss")?;
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..n {
            let y = labels[[i, j]];
            if y >= k {
                return Err(Error::Label(format!("phase label {y} outside 0..{k}")));
            }
            total -= clamp_prob(probs[[i, j, y]]).ln();
        }
    }
    Ok(total / (b * n).max(1) as f64)
}

/// Correlation loss between tool-branch probabilities and mapped priors.
pub fn correlation_loss(tool_probs: ArrayView3<f64>, tool_priors: ArrayView3<f64>) -> Result<f64> {
    check_same(tool_probs.shape(), tool_priors.shape(), "correlation loss")?;
    let mut total = 0.0;
    for (a, b) in tool_probs.iter().zip(tool_priors.iter()) {
        let a = check_prob(*a, "tool probability")?;
        let b = check_prob(*b, "tool prior")?;
        total += 0.5 * bernoulli_kl_unchecked(a, b) + 0.5 * bernoulli_kl_unchecked(b, a);
    }
    Ok(total / frames_of(tool_probs.shape()).max(1) as f64)
}

/// Squared L2 norm over the given (trainable) partitions.
pub fn weight_decay(weights: &Weights, trainable: PartitionSet) -> f64 {
    weights.squared_norm(trainable)
}

/// Combines measured components into the weighted objective; inactive terms
/// are reported but excluded from `total`.
pub fn total_loss(c: LossComponents, lambdas: Lambdas, active: ActiveTerms) -> Result<LossBreakdown> {
    lambdas.validate()?;
    let gate = |on: bool, v: f64| if on { v } else { 0.0 };
    let total = gate(active.tool, c.tool)
        + lambdas.phase * gate(active.phase, c.phase)
        + lambdas.correlation * gate(active.correlation, c.correlation)
        + gate(active.mapped_tool, c.mapped_tool)
        + lambdas.decay * c.weight_decay;
    Ok(LossBreakdown {
        tool_loss: c.tool,
        phase_loss: c.phase,
        correlation_loss: c.correlation,
        mapped_tool_loss: c.mapped_tool,
        weight_decay: c.weight_decay,
        total,
        lambdas,
        active,
    })
}

/// Per-clip labels in flat form.
pub(crate) struct ClipLabels<'a> {
    pub tools: &'a [Vec<u8>],
    pub phases: &'a [usize],
}

/// Loss sums of one clip (not yet averaged) and gradients of the weighted
/// data objective with respect to the clip outputs, already scaled by
/// `scale` (normally `1 / (batch · N_f)`).
pub(crate) fn clip_objective(
    trace: &crate::model::ClipTrace,
    labels: &ClipLabels<'_>,
    lambdas: Lambdas,
    active: ActiveTerms,
    scale: f64,
) -> (LossComponents, crate::model::OutputGrads) {
    let n = trace.tool_probs.len();
    let tools = trace.tool_probs.first().map_or(0, |r| r.len());
    let phases = trace.phase_probs.first().map_or(0, |r| r.len());
    let mut g = crate::model::OutputGrads::zeros(n, tools, phases);
    let mut sums = LossComponents::default();
    for t in 0..n {
        let y = &labels.tools[t];
        sums.tool += tool_loss_frame(&trace.tool_probs[t], y);
        let p_true = clamp_prob(trace.phase_probs[t][labels.phases[t]]);
        sums.phase -= p_true.ln();
        sums.correlation += correlation_loss_frame(&trace.tool_probs[t], &trace.tool_priors[t]);
        if let Some(q) = &trace.phase_priors {
            sums.correlation += symmetric_categorical_kl(&trace.phase_probs[t], &q[t]);
        }
        sums.mapped_tool += tool_loss_frame(&trace.tool_priors[t], y);

        if active.tool {
            tool_loss_frame_grad(&trace.tool_probs[t], y, scale, &mut g.tool_probs[t]);
        }
        if active.phase {
            g.phase_probs[t][labels.phases[t]] += scale * lambdas.phase * (-1.0 / p_true);
        }
        if active.correlation && lambdas.correlation != 0.0 {
            let s = scale * lambdas.correlation;
            correlation_loss_frame_grad(
                &trace.tool_probs[t],
                &trace.tool_priors[t],
                s,
                &mut g.tool_probs[t],
                &mut g.tool_priors[t],
            );
            if let Some(q) = &trace.phase_priors {
                symmetric_categorical_kl_grad(
                    &trace.phase_probs[t],
                    &q[t],
                    s,
                    &mut g.phase_probs[t],
                    &mut g.phase_priors[t],
                );
            }
        }
        if active.mapped_tool {
            tool_loss_frame_grad(&trace.tool_priors[t], y, scale, &mut g.tool_priors[t]);
        }
    }
    (sums, g)
}
