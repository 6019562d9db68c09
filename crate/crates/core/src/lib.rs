//! Geometry, stereo matching, circular attention, depth alignment, fusion
//! and evaluation for multi-cylindrical omnidirectional stereo.

pub mod attention;
pub mod disparity;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod resample;
pub mod scene;
pub mod stereo;

pub use error::{Error, Result};
