//! Shared encoder, tool branch, recurrent phase branch and mapping cell.

mod config;
pub mod container;
mod encoder;
pub mod layers;
mod lstm;
mod network;
mod params;

pub use config::{ArchConfig, EncoderBlock, MappingSource};
pub use layers::PROB_EPS;
pub use lstm::RecurrentState;
pub use network::{
    encode_frames, forward, forward_with, map_phase_features, phase_head_forward,
    relu_pattern, tool_head_forward, ClipBatch, FrameOutput, JointPrediction, OnlineSession,
};
pub(crate) use network::{batch_traces, clip_backward, ClipTrace, OutputGrads};
pub use params::{
    init_parameters, Backbone, Conv, EncoderLayer, Linear, MappingCell, ModelParams, Partition,
    PartitionSet, PhaseHead, Tensor, ToolHead, Weights,
};
