pub mod bg_estimate;
pub mod cli;
pub mod envlight;
pub mod error;
pub mod forge;
pub mod geometry;
pub mod harmonize;
pub mod io;
pub mod metrics;
pub mod raster;
pub mod shading_field;

pub use error::{Error, Result};
