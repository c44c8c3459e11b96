use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ArchConfig, EncoderBlock};
use crate::error::{Error, Result};

/// Dense row-major array of weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-limit..=limit)).collect(),
        }
    }
}

/// The four disjoint groups of trainable weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Backbone,
    ToolHead,
    PhaseHead,
    MappingCell,
}

impl Partition {
    pub const ALL: [Partition; 4] = [
        Partition::Backbone,
        Partition::ToolHead,
        Partition::PhaseHead,
        Partition::MappingCell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Backbone => "backbone",
            Partition::ToolHead => "tool_head",
            Partition::PhaseHead => "phase_head",
            Partition::MappingCell => "mapping_cell",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Subset of partitions, e.g. the frozen set of a training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Partition>", into = "Vec<Partition>")]
pub struct PartitionSet([bool; 4]);

impl PartitionSet {
    pub const EMPTY: PartitionSet = PartitionSet([false; 4]);
    pub const ALL: PartitionSet = PartitionSet([true; 4]);

    pub fn of(parts: &[Partition]) -> Self {
        let mut s = Self::EMPTY;
        for &p in parts {
            s.0[p.index()] = true;
        }
        s
    }

    pub fn contains(&self, p: Partition) -> bool {
        self.0[p.index()]
    }

    pub fn complement(&self) -> Self {
        PartitionSet(self.0.map(|b| !b))
    }

    pub fn iter(&self) -> impl Iterator<Item = Partition> + '_ {
        Partition::ALL.into_iter().filter(|p| self.contains(*p))
    }
}

impl From<Vec<Partition>> for PartitionSet {
    fn from(v: Vec<Partition>) -> Self {
        Self::of(&v)
    }
}

impl From<PartitionSet> for Vec<Partition> {
    fn from(s: PartitionSet) -> Self {
        s.iter().collect()
    }
}

const CONV_BIAS_INIT: f64 = 0.01;
const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Linear {
    fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Tensor::xavier(&[outputs, inputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `[out, in, k, k]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Conv {
    fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let kk = kernel * kernel;
        let mut bias = Tensor::zeros(&[c_out]);
        // small positive offset keeps all-zero receptive fields off the ReLU kink
        bias.data.iter_mut().for_each(|b| *b = CONV_BIAS_INIT);
        Self {
            weight: Tensor::xavier(&[c_out, c_in, kernel, kernel], c_in * kk, c_out * kk, rng),
            bias,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderLayer {
    Conv(Conv),
    Residual(Conv, Conv),
}

/// Shared encoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub layers: Vec<EncoderLayer>,
    /// 1x1 projection to `feature_dim` ahead of global average pooling.
    pub proj: Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolHead {
    pub fc: Linear,
}

/// LSTM cell (gate order: input, forget, candidate, output) plus the phase
/// classifier on top of its hidden output.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHead {
    /// `[4H, F]`
    pub w_input: Tensor,
    /// `[4H, H]`
    pub w_hidden: Tensor,
    /// `[4H]`
    pub bias: Tensor,
    pub classifier: Linear,
}

impl PhaseHead {
    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.shape[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingCell {
    pub to_tools: Linear,
    /// Present only for the mutual-mapping variant.
    pub to_phases: Option<Linear>,
}

/// All trainable weights, grouped by partition. Gradients share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub backbone: Backbone,
    pub tool_head: ToolHead,
    pub phase_head: PhaseHead,
    pub mapping_cell: MappingCell,
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}

fn push_conv<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, c: &'a Conv) {
    out.push((format!("{prefix}.weight"), &c.weight));
    out.push((format!("{prefix}.bias"), &c.bias));
}

impl Weights {
    /// Named tensors of one partition, in a fixed order.
    pub fn partition_tensors(&self, part: Partition) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match part {
            Partition::Backbone => {
                for (i, layer) in self.backbone.layers.iter().enumerate() {
                    match layer {
                        EncoderLayer::Conv(c) => push_conv(&mut out, &format!("layer{i}.conv"), c),
                        EncoderLayer::Residual(a, b) => {
                            push_conv(&mut out, &format!("layer{i}.res_a"), a);
                            push_conv(&mut out, &format!("layer{i}.res_b"), b);
                        }
                    }
                }
                push_conv(&mut out, "proj", &self.backbone.proj);
            }
            Partition::ToolHead => push_linear(&mut out, "fc", &self.tool_head.fc),
            Partition::PhaseHead => {
                let h = &self.phase_head;
                out.push(("lstm.w_input".into(), &h.w_input));
                out.push(("lstm.w_hidden".into(), &h.w_hidden));
                out.push(("lstm.bias".into(), &h.bias));
                push_linear(&mut out, "classifier", &h.classifier);
            }
            Partition::MappingCell => {
                push_linear(&mut out, "to_tools", &self.mapping_cell.to_tools);
                if let Some(l) = &self.mapping_cell.to_phases {
                    push_linear(&mut out, "to_phases", l);
                }
            }
        }
        out
    }

    pub fn partition_tensors_mut(&mut self, part: Partition) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        match part {
            Partition::Backbone => {
                for layer in &mut self.backbone.layers {
                    match layer {
                        EncoderLayer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                        EncoderLayer::Residual(a, b) => {
                            out.extend([&mut a.weight, &mut a.bias, &mut b.weight, &mut b.bias])
                        }
                    }
                }
                let p = &mut self.backbone.proj;
                out.extend([&mut p.weight, &mut p.bias]);
            }
            Partition::ToolHead => {
                let fc = &mut self.tool_head.fc;
                out.extend([&mut fc.weight, &mut fc.bias]);
            }
            Partition::PhaseHead => {
                let h = &mut self.phase_head;
                out.extend([
                    &mut h.w_input,
                    &mut h.w_hidden,
                    &mut h.bias,
                    &mut h.classifier.weight,
                    &mut h.classifier.bias,
                ]);
            }
            Partition::MappingCell => {
                let m = &mut self.mapping_cell;
                out.extend([&mut m.to_tools.weight, &mut m.to_tools.bias]);
                if let Some(l) = &mut m.to_phases {
                    out.extend([&mut l.weight, &mut l.bias]);
                }
            }
        }
        out
    }

    /// Every tensor as `partition/name`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        Partition::ALL
            .into_iter()
            .flat_map(|p| {
                self.partition_tensors(p)
                    .into_iter()
                    .map(move |(n, t)| (format!("{}/{}", p.name(), n), t))
            })
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in Partition::ALL {
            for t in z.partition_tensors_mut(p) {
                t.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        z
    }

    pub fn num_weights(&self, part: Partition) -> usize {
        self.partition_tensors(part).iter().map(|(_, t)| t.len()).sum()
    }

    /// Sum of squares over the given partitions.
    pub fn squared_norm(&self, parts: PartitionSet) -> f64 {
        parts
            .iter()
            .flat_map(|p| self.partition_tensors(p))
            .flat_map(|(_, t)| t.data.iter())
            .map(|x| x * x)
            .sum()
    }

    /// `self += scale * other`, partition by partition.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for p in Partition::ALL {
            let src = other.partition_tensors(p);
            for (dst, (_, s)) in self.partition_tensors_mut(p).into_iter().zip(src) {
                for (d, v) in dst.data.iter_mut().zip(&s.data) {
                    *d += scale * v;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for p in Partition::ALL {
            for t in self.partition_tensors_mut(p) {
                t.data.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    /// Set every weight of a partition to zero.
    pub fn zero_partition(&mut self, part: Partition) {
        for t in self.partition_tensors_mut(part) {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Architecture plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ArchConfig,
    pub weights: Weights,
}

/// Xavier-uniform initialisation of every partition. Linear biases start at
/// zero, convolution biases at a small positive constant and the LSTM
/// forget-gate bias at one.
pub fn init_parameters(config: &ArchConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut layers = Vec::with_capacity(config.encoder.len());
    let mut c = config.channels;
    for block in &config.encoder {
        match *block {
            EncoderBlock::Conv {
                channels, kernel, ..
            } => {
                layers.push(EncoderLayer::Conv(Conv::new(c, channels, kernel, &mut rng)));
                c = channels;
            }
            EncoderBlock::Residual { kernel } => {
                let a = Conv::new(c, c, kernel, &mut rng);
                let b = Conv::new(c, c, kernel, &mut rng);
                layers.push(EncoderLayer::Residual(a, b));
            }
        }
    }
    let proj = Conv::new(c, config.feature_dim, 1, &mut rng);
    let backbone = Backbone { layers, proj };

    let tool_head = ToolHead {
        fc: Linear::new(config.feature_dim, config.num_tools, &mut rng),
    };

    let h = config.phase_feature_dim;
    let f = config.feature_dim;
    let phase_head = PhaseHead {
        w_input: Tensor::xavier(&[4 * h, f], f, 4 * h, &mut rng),
        w_hidden: Tensor::xavier(&[4 * h, h], h, 4 * h, &mut rng),
        bias: Tensor {
            shape: vec![4 * h],
            data: (0..4 * h)
                .map(|i| if (h..2 * h).contains(&i) { FORGET_BIAS_INIT } else { 0.0 })
                .collect(),
        },
        classifier: Linear::new(h, config.num_phases, &mut rng),
    };

    let mapping_cell = MappingCell {
        to_tools: Linear::new(config.mapping_input_dim(), config.num_tools, &mut rng),
        to_phases: config
            .mutual_mapping
            .then(|| Linear::new(config.num_tools, config.num_phases, &mut rng)),
    };

    Ok(ModelParams {
        config: config.clone(),
        weights: Weights {
            backbone,
            tool_head,
            phase_head,
            mapping_cell,
        },
    })
}

impl ModelParams {
    /// Replace the backbone with arrays from a weight container, checking
    /// names and shapes.
    pub fn load_backbone(&mut self, arrays: &[(String, Tensor)]) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .weights
            .partition_tensors(Partition::Backbone)
            .into_iter()
            .map(|(n, t)| (format!("backbone/{n}"), t.shape.clone()))
            .collect();
        let mut found = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let (_, t) = arrays
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Load(format!("missing array {name}")))?;
            if &t.shape != shape {
                return Err(Error::Load(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape
                )));
            }
            found.push(t.data.clone());
        }
        for (dst, src) in self
            .weights
            .partition_tensors_mut(Partition::Backbone)
            .into_iter()
            .zip(found)
        {
            dst.data = src;
        }
        Ok(())
    }
}
