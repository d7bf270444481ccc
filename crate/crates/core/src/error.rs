use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("pyramid with {levels} levels is too deep for dims {dims:?}")]
    PyramidTooDeep { levels: usize, dims: [usize; 3] },

    #[error("coordinate {0:?} lies outside the unit cube")]
    OutsideUnitCube([f64; 3]),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("pixel ({x}, {y}) outside a {width}x{height} image")]
    PixelOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("non-finite gradient in {group} at index {index}: {value}")]
    NonFiniteGradient {
        group: String,
        index: usize,
        value: f64,
    },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("atlas capacity exceeded at level {level}: {required} blocks required, capacity {capacity}")]
    AtlasOverflow {
        level: usize,
        required: usize,
        capacity: usize,
    },

    #[error("corrupt asset: {0}")]
    CorruptAsset(String),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("bad snapshot {path}: {reason}")]
    BadSnapshot { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
