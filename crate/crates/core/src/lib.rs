//! Score-based tensor recovery.
//!
//! An energy network `E(x, z[, t])` scores a tensor entry value `x` against the
//! latent factor `z` of its index (and optionally a timestamp). The network is
//! fit with multi-noise denoising score matching; missing entries are then
//! filled by annealed Langevin sampling or grid search, and mixed noise is
//! separated from the signal by a block-coordinate-descent loop that alternates
//! sampling, soft-thresholding and retraining.

pub mod autodiff;
pub mod cli;
pub mod datagen;
pub mod dsm;
pub mod energy;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod recovery;
pub mod rng;
pub mod samplers;
pub mod tensor;

pub use error::{Error, Result};
