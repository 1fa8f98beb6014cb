//! LiDAR place recognition built around windowed-attention local features,
//! attention pooling into tokens and an MLP-mixer aggregator.

pub mod backbone;
mod binio;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod geometry;
pub mod localization;
pub mod model;
pub mod numeric;
pub mod retrieval;
pub mod training;

pub use error::{Result, SalsaError};
