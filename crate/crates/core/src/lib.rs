//! Fourier amplitude/phase style calibration for domain generalization.
//!
//! Modules, bottom up:
//! - [`tensor`]: rank-4 tensors, a differentiation tape, layers and SGD.
//! - [`spectral`]: channel-wise 2D DFT, amplitude/phase split, inverse.
//! - [`stylecal`]: prototype bank, calibration, amplitude mixing, style layer.
//! - [`model`]: configurable conv network with an optional style layer.
//! - [`data`]: synthetic multi-domain images, splits, storage.
//! - [`trainer`]: training loop, evaluation, ablations, sweeps, export.

pub mod data;
pub mod error;
pub mod model;
pub mod spectral;
pub mod stylecal;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
