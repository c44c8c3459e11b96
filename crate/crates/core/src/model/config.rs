use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One block of the shared convolutional encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderBlock {
    /// `relu(conv(x) + b)` with "same" padding.
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// `relu(x + conv2(relu(conv1(x))))`; keeps channel count and resolution.
    Residual { kernel: usize },
}

/// What the mapping cell reads to produce tool priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingSource {
    /// Recurrent hidden output `r_t` (the full model).
    #[default]
    PhaseFeatures,
    /// Predicted phase distribution (label-space mapping ablation).
    PhaseLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub frame_size: usize,
    pub channels: usize,
    pub feature_dim: usize,
    pub phase_feature_dim: usize,
    pub num_tools: usize,
    pub num_phases: usize,
    pub clip_len: usize,
    pub encoder: Vec<EncoderBlock>,
    pub mapping_source: MappingSource,
    /// Adds a second mapping from tool probabilities to phase priors.
    pub mutual_mapping: bool,
    /// Pixels enter the encoder as `(x - input_mean) / input_std`.
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            frame_size: 16,
            channels: 3,
            feature_dim: 24,
            phase_feature_dim: 16,
            num_tools: 7,
            num_phases: 7,
            clip_len: 10,
            encoder: vec![
                EncoderBlock::Conv {
                    channels: 8,
                    kernel: 3,
                    stride: 2,
                },
                EncoderBlock::Residual { kernel: 3 },
                EncoderBlock::Conv {
                    channels: 16,
                    kernel: 3,
                    stride: 2,
                },
            ],
            mapping_source: MappingSource::PhaseFeatures,
            mutual_mapping: false,
            input_mean: 0.5,
            input_std: 0.25,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frame_size", self.frame_size),
            ("channels", self.channels),
            ("feature_dim", self.feature_dim),
            ("phase_feature_dim", self.phase_feature_dim),
            ("num_tools", self.num_tools),
            ("num_phases", self.num_phases),
            ("clip_len", self.clip_len),
        ];
        if !(self.input_std > 0.0 && self.input_mean.is_finite()) {
            return Err(Error::config("input_std must be positive and input_mean finite"));
        }
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        let mut size = self.frame_size;
        for (i, block) in self.encoder.iter().enumerate() {
            let (kernel, stride) = match *block {
                EncoderBlock::Conv {
                    channels,
                    kernel,
                    stride,
                } => {
                    if channels == 0 {
                        return Err(Error::config(format!("encoder block {i}: zero channels")));
                    }
                    (kernel, stride)
                }
                EncoderBlock::Residual { kernel } => (kernel, 1),
            };
            if kernel == 0 || kernel % 2 == 0 {
                return Err(Error::config(format!(
                    "encoder block {i}: kernel must be odd and positive, got {kernel}"
                )));
            }
            if stride == 0 {
                return Err(Error::config(format!("encoder block {i}: zero stride")));
            }
            size = conv_out_size(size, kernel, stride);
        }
        if size == 0 {
            return Err(Error::config("encoder reduces the frame to nothing"));
        }
        Ok(())
    }

    /// Input width of the tool mapping cell.
    pub fn mapping_input_dim(&self) -> usize {
        match self.mapping_source {
            MappingSource::PhaseFeatures => self.phase_feature_dim,
            MappingSource::PhaseLabels => self.num_phases,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.frame_size * self.frame_size
    }
}

pub(crate) fn conv_out_size(size: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (size + 2 * pad - kernel) / stride + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ArchConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_feature_dim_rejected() {
        let cfg = ArchConfig {
            feature_dim: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn even_kernel_rejected() {
        let cfg = ArchConfig {
            encoder: vec![EncoderBlock::Residual { kernel: 2 }],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ArchConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ArchConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
