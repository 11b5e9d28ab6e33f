//! Multitask learning engine: a U-Net with a shared encoder that regresses a
//! depth map and classifies the image from its bottleneck, trained on a
//! depth-extruded MNIST with controllable noise and training-set size.
//!
//! Modules, bottom up:
//! - [`tensor`]: tensors and reverse-mode differentiation
//! - [`nn`]: layer primitives and losses
//! - [`model`]: the multitask U-Net
//! - [`data`]: IDX parsing, preprocessing, depth extrusion, noise, cohorts
//! - [`train`]: SGD with momentum and the four training strategies
//! - [`experiment`]: configuration, sweeps, reports, checkpoints

pub mod data;
pub mod error;
pub mod model;
pub mod rng;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod experiment;

pub use error::{Error, Result};
