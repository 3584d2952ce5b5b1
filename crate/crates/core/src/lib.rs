//! Raster data model and the non-learned parts of the FLNet pipeline:
//! NDVI, change labelling, evaluation metrics and synthetic scenes.

pub mod change;
pub mod error;
pub mod metrics;
pub mod raster;
pub mod synth;

pub use error::{RasterError, Result};
pub use raster::{GeoTransform, Grid, Raster};
