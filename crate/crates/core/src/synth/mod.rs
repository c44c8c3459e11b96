//! Synthetic surgical workflows, annotation I/O, clip sampling and
//! augmentation.

mod augment;
mod clips;
mod generate;
mod io;
mod spec;

pub use augment::{augment_clip, crop_frame, mirror_frame, Augmentation};
pub use clips::{clip_windows, make_clips, ClipRef, ClipSampler};
pub use generate::{
    derive_seed, generate_video, generate_workflow, presence_rates, render_frame, sample_tools,
    VideoRecord, CHANNELS,
};
pub use io::{
    generate_dataset, load_annotations, load_dataset, read_frames, write_frames, AlignedLabels,
    AnnotationSchema, Dataset, DatasetManifest, DatasetSplit, GenerateOptions,
};
pub use spec::{WorkflowSpec, PHASE_NAMES, TOOL_NAMES};
