//! Experiment harness: file formats, configuration, sources and sweeps.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod pgm;
pub mod report;
pub mod source;
pub mod tensor;
pub mod verify;
