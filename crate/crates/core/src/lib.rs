//! Two-stage lymph node detection toolkit without the neural networks.
//!
//! The crate covers the deterministic parts of a CT/PET detection pipeline:
//! volume handling ([`volgrid`]), signed distance stratification around the
//! primary tumor ([`distfield`]), late fusion of stream probabilities
//! ([`streamfusion`]), detection by segmentation ([`instancer`]), second-stage
//! rescoring plumbing ([`stage2`]), detection metrics ([`matcheval`]), a
//! synthetic phantom with an oracle segmenter ([`phantom`]) and the batch
//! driver ([`pipeline`]).

pub mod distfield;
mod error;
pub mod instancer;
pub mod matcheval;
pub mod phantom;
pub mod pipeline;
pub mod stage2;
pub mod streamfusion;
pub mod volgrid;

pub use error::{Error, Result};
