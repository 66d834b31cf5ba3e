//! Spatial GAN with dilated convolutions for synthesizing globally ergodic
//! binary textures (channelized subsurface structures), together with the
//! geostatistical and visual-descriptor metrics used to judge sample quality.
//!
//! The crate is organized along the pipeline:
//!
//! * [`data`] — source images, patch sampling, toy texture generators
//! * [`model`] — declarative network specs and receptive-field arithmetic
//! * [`nn`] — forward/backward passes for the convolutional layer zoo
//! * [`checkpoint`] — binary persistence of weights and training state
//! * [`train`] — spatially averaged adversarial losses, Adam, training loop
//! * [`metrics`] — connectivity function, total variation, LBP, HOG, χ²
//! * [`eval`] — real-vs-synthetic comparison reports

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
