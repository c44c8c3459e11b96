use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical Cholec80 phase names, in surgical order.
pub const PHASE_NAMES: [&str; 7] = [
    "Preparation",
    "CalotTriangleDissection",
    "ClippingCutting",
    "GallbladderDissection",
    "GallbladderPackaging",
    "CleaningCoagulation",
    "GallbladderRetraction",
];

/// Cholec80 tool column names.
pub const TOOL_NAMES: [&str; 7] = [
    "Grasper",
    "Bipolar",
    "Hook",
    "Scissors",
    "Clipper",
    "Irrigator",
    "SpecimenBag",
];

/// Generative description of a synthetic procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowSpec {
    pub num_phases: usize,
    pub num_tools: usize,
    /// Inclusive `(min, max)` duration of each phase, in frames at 1 fps.
    pub duration_range: Vec<(usize, usize)>,
    /// `tool_given_phase[c][z]` = P(tool c present | phase z).
    pub tool_given_phase: Vec<Vec<f64>>,
    /// Mean length of a presence episode, in frames.
    pub tool_persistence: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_level: f64,
    /// Standard deviation of a per-frame, per-channel brightness offset.
    pub illumination_jitter: f64,
    /// Rendered frame side length in pixels.
    pub frame_size: usize,
    /// Strength of the phase-specific background colour.
    pub background_contrast: f64,
    /// Strength of the tool glyphs.
    pub tool_contrast: f64,
    /// Probability that a present tool is actually drawn in a frame.
    pub tool_visibility: f64,
}

impl Default for WorkflowSpec {
    fn default() -> Self {
        Self {
            num_phases: 7,
            num_tools: 7,
            duration_range: vec![(4, 10), (18, 32), (6, 12), (14, 28), (4, 10), (5, 12), (3, 8)],
            // rows: tools, columns: phases
            tool_given_phase: vec![
                vec![0.50, 0.85, 0.70, 0.85, 0.90, 0.60, 0.70],
                vec![0.05, 0.05, 0.05, 0.05, 0.05, 0.70, 0.05],
                vec![0.10, 0.95, 0.10, 0.90, 0.05, 0.05, 0.05],
                vec![0.00, 0.02, 0.40, 0.02, 0.00, 0.00, 0.00],
                vec![0.00, 0.02, 0.80, 0.02, 0.00, 0.05, 0.00],
                vec![0.05, 0.05, 0.05, 0.05, 0.10, 0.60, 0.30],
                vec![0.00, 0.00, 0.00, 0.00, 0.85, 0.05, 0.10],
            ],
            tool_persistence: 4.0,
            noise_level: 0.15,
            illumination_jitter: 0.0,
            frame_size: 18,
            background_contrast: 0.25,
            tool_contrast: 0.6,
            tool_visibility: 1.0,
        }
    }
}

impl WorkflowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_phases == 0 || self.num_tools == 0 {
            return Err(Error::config("workflow needs at least one phase and one tool"));
        }
        if self.num_phases > PHASE_NAMES.len() || self.num_tools > TOOL_NAMES.len() {
            return Err(Error::config("at most 7 phases and 7 tools are supported"));
        }
        if self.duration_range.len() != self.num_phases {
            return Err(Error::config(format!(
                "duration_range has {} entries, expected {}",
                self.duration_range.len(),
                self.num_phases
            )));
        }
        for (z, &(lo, hi)) in self.duration_range.iter().enumerate() {
            if lo < 1 || hi < lo {
                return Err(Error::config(format!(
                    "phase {z}: duration range ({lo}, {hi}) invalid"
                )));
            }
        }
        if self.tool_given_phase.len() != self.num_tools
            || self.tool_given_phase.iter().any(|r| r.len() != self.num_phases)
        {
            return Err(Error::config("tool_given_phase must be num_tools x num_phases"));
        }
        if self
            .tool_given_phase
            .iter()
            .flatten()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::config("tool_given_phase entries must lie in [0, 1]"));
        }
        if !(self.tool_persistence >= 1.0) {
            return Err(Error::config("tool_persistence must be >= 1"));
        }
        if !(self.noise_level >= 0.0 && self.illumination_jitter >= 0.0) {
            return Err(Error::config("noise_level and illumination_jitter must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.tool_visibility) {
            return Err(Error::config("tool_visibility must lie in [0, 1]"));
        }
        if self.frame_size < 8 {
            return Err(Error::config("frame_size must be at least 8 pixels"));
        }
        Ok(())
    }

    pub fn phase_name(&self, z: usize) -> &'static str {
        PHASE_NAMES[z]
    }
}
