//! Multiscale voxel-grid radiance fields: mip pyramids over density and color
//! grids, ray-differential level selection, a deferred view-dependent MLP,
//! training, evaluation and baking for a web viewer.

pub mod adam;
pub mod bake;
pub mod camera;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod mlp;
pub mod occupancy;
pub mod pipeline;
pub mod render;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
