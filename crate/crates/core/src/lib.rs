//! Edge-vision toolkit for rock hunting on planetary imagery.
//!
//! The pipeline chips large panoramas into tiles, runs small CNN classifiers
//! and detectors in float32 or integer-only int8, post-training-quantizes
//! models, statically plans activation memory and reports accuracy,
//! latency, RAM and ROM side by side.

pub mod dataset;
pub mod detect;
pub mod engine;
pub mod eval;
pub mod fixtures;
pub mod format;
pub mod planner;
pub mod quantizer;
pub mod tensor;
