//! File formats, datasets on disk, reports and the command-line driver
//! around `segssl-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod raster;
pub mod render;
pub mod reports;
pub mod softlabels;

pub use error::{Error, Result};
