//! Workbench for measuring how blending GAN-synthesized images into a
//! classifier's training set changes its accuracy on real test data.
//!
//! The pipeline: per-class DCGANs produce a synthetic pool, [`data::blend`]
//! mixes it with real images at fixed ratios, a small CNN is trained on each
//! blend, and [`metrics`] scores every model on one fixed real test set.

pub mod autodiff;
pub mod checkpoint;
pub mod cnn;
pub mod data;
pub mod dcgan;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod parallel;

pub use error::{Error, Result};
pub mod sweep;
