//! Vegetation height mapping engine.
//!
//! Learns per-pixel canopy height from four-band multispectral patches and a
//! terrain model with a fully convolutional ResNeXt regressor, composites
//! annual maps from scene predictions, and evaluates them with stratified
//! error statistics and object-level structural change detection.
//!
//! Module map:
//!
//! - [`raster`]: georeferenced grids, pooling, bilinear resampling, terrain
//!   derivatives, the `RSTR` file format.
//! - [`tensor`]: dense tensors with a tape-based reverse mode for the layer
//!   set of the model, parameter checkpoints, gradient checking.
//! - [`model`]: the regressor itself.
//! - [`train`]: normalization, loss, Adam, the training loop.
//! - [`pipeline`]: scene selection, patch extraction, tiled inference,
//!   masking and median compositing.
//! - [`eval`]: metrics, residual bins, density scatter, strata.
//! - [`change`]: change objects, box-plot statistics, F1 scoring.
//! - [`synth`]: deterministic synthetic worlds for desk-scale runs.

pub mod change;
pub mod error;
pub mod eval;
pub mod kv;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod tensor;
pub mod train;

mod fmt;

pub use error::{Error, Result};
pub use fmt::fmt_sig6;
