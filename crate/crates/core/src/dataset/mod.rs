//! Posed image datasets: blender-convention I/O, multiscale construction and
//! procedural oracle scenes with supersampled ground truth.

mod blender;
mod multiscale;
mod oracle;

pub use blender::{load_dataset, load_split, write_dataset, FrameEntry, TransformsFile};
pub use multiscale::{box_downsample, make_multiscale, SCALES};
pub use oracle::{
    generate_oracle_dataset, orbit_cameras, render_oracle, Checker, Material, OracleScene, OracleViews, Primitive,
    Shape,
};

use crate::camera::Camera;
use crate::geometry::Aabb;
use crate::image::Image;

/// One posed image at a given downsampling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub camera: Camera,
    /// Downsampling factor relative to the full-resolution capture.
    pub scale: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<Frame>,
    pub test: Vec<Frame>,
    /// Scene bounds when the dataset records them.
    pub bbox: Option<Aabb>,
}

impl Dataset {
    pub fn frames(&self, split: &Split) -> &[Frame] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Distinct scale factors present in `split`, ascending.
    pub fn scales(&self, split: &Split) -> Vec<u32> {
        let mut s: Vec<u32> = self.frames(split).iter().map(|f| f.scale).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Dataset with every full-resolution frame expanded to all scales.
    pub fn multiscale(&self) -> crate::Result<Self> {
        Ok(Self {
            train: make_multiscale(&self.train)?,
            test: make_multiscale(&self.test)?,
            bbox: self.bbox,
        })
    }
}
