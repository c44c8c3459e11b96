//! Multi-task recurrent convolutional network with a correlation loss for
//! joint surgical tool presence detection and phase recognition.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: shared encoder, tool branch, LSTM phase branch, mapping cell,
//!   forward and backward passes, weight container.
//! * [`losses`]: tool, phase and correlation losses and their combination.
//! * [`synth`]: procedural workflow generator, annotation I/O, clips and
//!   augmentation.
//! * [`training`]: momentum SGD, plateau schedule, staged training plans.
//! * [`eval`]: phase and tool metrics, confusion and co-occurrence matrices,
//!   report and image emission.
//! * [`cli`]: the `mtrc` command-line front end.

pub mod cli;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod parallel;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
