use std::str::FromStr;

use rayon::prelude::*;

use super::{render_ray, PixelResult, RenderOptions, Scene};
use crate::camera::{generate_ray, Camera, RayBundle};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// `clamp(Ĉ_d + Ĉ_s)`.
    Color,
    /// Weight-averaged LOD as grayscale, divided by the top level index.
    Lod,
    /// `Ĉ_d` alone, background included.
    DiffuseOnly,
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" => Ok(Self::Color),
            "lod" => Ok(Self::Lod),
            "diffuse" | "diffuse_only" | "diffuse-only" => Ok(Self::DiffuseOnly),
            other => Err(Error::InvalidConfig(format!("unknown render mode `{other}`"))),
        }
    }
}

/// Traces every pixel center of `cam` through `trace`, row-parallel.
pub(crate) fn trace_pixels<F>(cam: &Camera, trace: F) -> Result<Vec<PixelResult>>
where
    F: Fn(&RayBundle) -> PixelResult + Sync,
{
    cam.validate()?;
    let rows: Vec<Vec<PixelResult>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            (0..cam.width)
                .map(|x| trace(&generate_ray(cam, x, y, None).expect("pixel in bounds")))
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Turns traced pixels into an image; `levels` normalizes LOD maps.
pub(crate) fn pixels_to_image(cam: &Camera, pixels: &[PixelResult], mode: RenderMode, levels: usize) -> Result<Image> {
    let top = (levels.max(2) - 1) as f64;
    let data = pixels
        .iter()
        .flat_map(|p| match mode {
            RenderMode::Color => p.color,
            RenderMode::DiffuseOnly => p.diffuse,
            RenderMode::Lod => {
                let v = if p.acc > 0.0 { p.lod_map / top } else { 0.0 };
                [v; 3]
            }
        })
        .collect();
    Image::from_data(cam.width, cam.height, data)
}

fn render_pixels(cam: &Camera, scene: &Scene, opts: &RenderOptions) -> Result<Vec<PixelResult>> {
    trace_pixels(cam, |ray| render_ray(scene, ray, opts))
}

/// Renders every pixel of `cam`.
pub fn render_image(cam: &Camera, scene: &Scene, mode: RenderMode, opts: &RenderOptions) -> Result<Image> {
    let pixels = render_pixels(cam, scene, opts)?;
    pixels_to_image(cam, &pixels, mode, scene.num_levels())
}

/// Raw per-pixel LOD maps (unnormalized); empty pixels report 0.
pub fn render_lod_values(cam: &Camera, scene: &Scene, opts: &RenderOptions) -> Result<Vec<f64>> {
    Ok(render_pixels(cam, scene, opts)?
        .iter()
        .map(|p| if p.acc > 0.0 { p.lod_map } else { 0.0 })
        .collect())
}
