//! Pinhole cameras, ray generation, and ray-differential level of detail.
//!
//! Cameras follow the blender convention: the camera looks down its local
//! `-z` axis with `+x` right and `+y` up. Pixel `(x, y)` spans
//! `[x, x+1) x [y, y+1)` with `y` growing downwards.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::voxel::VoxelGrid;

/// Offset, in pixels, of the differential rays along x and y.
pub const HALF_PIXEL: f64 = 0.5;

/// Default `λ = log2(ρ) / 3`: the voxel count drops 8x per level.
pub const DEFAULT_LOD_DIVISOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 4x4 rigid transform from camera to world.
    pub cam_to_world: [[f64; 4]; 4],
}

impl Camera {
    pub fn new(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        cam_to_world: [[f64; 4]; 4],
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            cam_to_world,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Symmetric camera at `eye` looking at `target`, with horizontal field of
    /// view `fov_x` in radians.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: u32, height: u32, fov_x: f64) -> Result<Self> {
        let back = (eye - target).normalize();
        let right = up.cross(&back);
        if right.norm() < 1e-12 {
            return Err(Error::InvalidCamera("up vector parallel to view direction".into()));
        }
        let right = right.normalize();
        let cam_up = back.cross(&right);
        let m = [
            [right.x, cam_up.x, back.x, eye.x],
            [right.y, cam_up.y, back.y, eye.y],
            [right.z, cam_up.z, back.z, eye.z],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(width, height, fx, fx, width as f64 * 0.5, height as f64 * 0.5, m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "image size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (error {err:.3e})"
            )));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let m = &self.cam_to_world;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
    }

    pub fn origin(&self) -> Vec3 {
        let m = &self.cam_to_world;
        Vec3::new(m[0][3], m[1][3], m[2][3])
    }

    /// Intrinsics and image size divided by `factor`; the pose is unchanged.
    pub fn scaled(&self, factor: u32) -> Self {
        let s = factor as f64;
        Self {
            width: self.width / factor,
            height: self.height / factor,
            fx: self.fx / s,
            fy: self.fy / s,
            cx: self.cx / s,
            cy: self.cy / s,
            cam_to_world: self.cam_to_world,
        }
    }

    /// Unnormalized world direction through image position `(px, py)`.
    fn raw_dir(&self, r: &Matrix3<f64>, px: f64, py: f64) -> Vec3 {
        r * Vec3::new((px - self.cx) / self.fx, -(py - self.cy) / self.fy, -1.0)
    }

    /// Unit world direction through image position `(px, py)`.
    pub fn direction_at(&self, px: f64, py: f64) -> Vec3 {
        self.raw_dir(&self.rotation(), px, py).normalize()
    }

    /// Image position of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<[f64; 2]> {
        let local = self.rotation().transpose() * (p - self.origin());
        if local.z >= 0.0 {
            return None;
        }
        let depth = -local.z;
        Some([
            self.cx + self.fx * local.x / depth,
            self.cy - self.fy * local.y / depth,
        ])
    }
}

/// A primary ray with its pixel-footprint differentials.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle {
    pub origin: Vec3,
    pub dir: Vec3,
    /// Unit direction of the ray offset by half a pixel along image x.
    pub dir_dx: Vec3,
    /// Unit direction of the ray offset by half a pixel along image y.
    pub dir_dy: Vec3,
    /// Derivative of the unit direction with respect to image x (per pixel).
    pub ddir_dx: Vec3,
    /// Derivative of the unit direction with respect to image y (per pixel).
    pub ddir_dy: Vec3,
    pub pixel: (u32, u32),
    pub scale_weight: f64,
    pub t_near: f64,
    pub t_far: f64,
}

impl RayBundle {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    /// Restricts the ray to `bbox`; `None` on a miss.
    pub fn clipped(mut self, bbox: &Aabb) -> Option<Self> {
        let (t0, t1) = bbox_intersect(&self, bbox)?;
        self.t_near = t0;
        self.t_far = t1;
        Some(self)
    }
}

/// Ray through the center of pixel `(x, y)` plus an optional subpixel jitter.
pub fn generate_ray(cam: &Camera, x: u32, y: u32, jitter: Option<[f64; 2]>) -> Result<RayBundle> {
    if x >= cam.width || y >= cam.height {
        return Err(Error::PixelOutOfBounds {
            x,
            y,
            width: cam.width,
            height: cam.height,
        });
    }
    let [jx, jy] = jitter.unwrap_or([0.0, 0.0]);
    let px = x as f64 + 0.5 + jx;
    let py = y as f64 + 0.5 + jy;
    let r = cam.rotation();
    let a = cam.raw_dir(&r, px, py);
    let inv_len = 1.0 / a.norm();
    let dir = a * inv_len;
    // d/dpx and d/dpy of the unnormalized direction.
    let da_dx = r.column(0) / cam.fx;
    let da_dy = -r.column(1) / cam.fy;
    let ddir_dx = (da_dx - dir * dir.dot(&da_dx)) * inv_len;
    let ddir_dy = (da_dy - dir * dir.dot(&da_dy)) * inv_len;
    Ok(RayBundle {
        origin: cam.origin(),
        dir,
        dir_dx: cam.raw_dir(&r, px + HALF_PIXEL, py).normalize(),
        dir_dy: cam.raw_dir(&r, px, py + HALF_PIXEL).normalize(),
        ddir_dx,
        ddir_dy,
        pixel: (x, y),
        scale_weight: 1.0,
        t_near: 0.0,
        t_far: f64::INFINITY,
    })
}

/// Slab intersection of the primary ray with `bbox`, clamped to `t >= 0`.
pub fn bbox_intersect(ray: &RayBundle, bbox: &Aabb) -> Option<(f64, f64)> {
    bbox.intersect(&ray.origin, &ray.dir)
}

/// Level of detail at one point along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LodSample {
    pub t: f64,
    /// `log2(ρ) / divisor`, unclamped; `-inf` when the footprint vanishes.
    pub lod: f64,
    /// Pixel-to-voxel footprint ratio.
    pub rho: f64,
    /// Voxel-unit offsets `(Δu, Δv, Δw)` towards the x-offset neighbor.
    pub delta_dx: [f64; 3],
    /// Voxel-unit offsets towards the y-offset neighbor.
    pub delta_dy: [f64; 3],
}

/// `log2(ρ) / divisor`, with `ρ = 0` mapped to `-inf`.
pub fn lod_from_rho(rho: f64, divisor: f64) -> f64 {
    if rho <= 0.0 {
        f64::NEG_INFINITY
    } else {
        rho.log2() / divisor
    }
}

/// Level-of-detail model for a level-0 grid: voxel sizes plus the divisor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LodModel {
    pub voxel_size: [f64; 3],
    pub divisor: f64,
}

impl LodModel {
    pub fn new(dims: [usize; 3], bbox: &Aabb, divisor: f64) -> Self {
        let e = bbox.extent();
        Self {
            voxel_size: [
                e[0] / dims[0] as f64,
                e[1] / dims[1] as f64,
                e[2] / dims[2] as f64,
            ],
            divisor,
        }
    }

    pub fn for_grid(grid: &VoxelGrid) -> Self {
        Self::new(grid.dims(), grid.bbox(), DEFAULT_LOD_DIVISOR)
    }

    /// Footprint of the pixel at ray parameter `t`.
    ///
    /// The neighbors `r_Δx(t)` and `r_Δy(t)` are the first-order offset rays
    /// `o + t (d + Δ ∂d/∂x)` at the same `t`, so the per-axis world distances
    /// are `t Δ |∂d/∂x|` componentwise.
    pub fn sample(&self, ray: &RayBundle, t: f64) -> LodSample {
        let per_axis = |dd: &Vec3| {
            let mut out = [0.0; 3];
            for a in 0..3 {
                let world = (t * HALF_PIXEL * dd[a]).abs();
                out[a] = world / self.voxel_size[a];
            }
            out
        };
        let delta_dx = per_axis(&ray.ddir_dx);
        let delta_dy = per_axis(&ray.ddir_dy);
        let norm = |d: &[f64; 3]| {
            let (a, b, c) = (d[0] / HALF_PIXEL, d[1] / HALF_PIXEL, d[2] / HALF_PIXEL);
            (a * a + b * b + c * c).sqrt()
        };
        let rho = norm(&delta_dx).max(norm(&delta_dy));
        LodSample {
            t,
            lod: lod_from_rho(rho, self.divisor),
            rho,
            delta_dx,
            delta_dy,
        }
    }
}

/// [`LodModel::sample`] with the default divisor.
pub fn ray_differential_lod(ray: &RayBundle, t: f64, grid: &VoxelGrid) -> LodSample {
    LodModel::for_grid(grid).sample(ray, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn front_camera(w: u32, h: u32, f: f64) -> Camera {
        Camera::new(
            w,
            h,
            f,
            f,
            w as f64 / 2.0,
            h as f64 / 2.0,
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 3.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_invalid_cameras() {
        let mut c = front_camera(8, 8, 10.0);
        c.fx = 0.0;
        assert!(c.validate().is_err());
        let mut c = front_camera(8, 8, 10.0);
        c.cam_to_world[0][0] = 1.1;
        assert!(c.validate().is_err());
        let mut c = front_camera(8, 8, 10.0);
        c.width = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn center_pixel_looks_down_minus_z() {
        // Odd size so a pixel center sits on the principal point.
        let cam = front_camera(9, 9, 20.0);
        let ray = generate_ray(&cam, 4, 4, None).unwrap();
        assert!((ray.dir - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_jitter_equals_none() {
        let cam = front_camera(16, 12, 30.0);
        assert_eq!(
            generate_ray(&cam, 3, 7, None).unwrap(),
            generate_ray(&cam, 3, 7, Some([0.0, 0.0])).unwrap()
        );
    }

    #[test]
    fn out_of_bounds_pixel() {
        let cam = front_camera(16, 12, 30.0);
        assert!(matches!(
            generate_ray(&cam, 16, 0, None),
            Err(Error::PixelOutOfBounds { .. })
        ));
        assert!(generate_ray(&cam, 0, 12, None).is_err());
    }

    #[test]
    fn directions_are_unit() {
        let cam = Camera::look_at(
            Vec3::new(2.0, -3.0, 1.5),
            Vec3::zeros(),
            Vec3::z(),
            40,
            30,
            0.8,
        )
        .unwrap();
        for (x, y) in [(0, 0), (39, 29), (17, 5)] {
            let r = generate_ray(&cam, x, y, None).unwrap();
            for d in [r.dir, r.dir_dx, r.dir_dy] {
                assert!((d.norm() - 1.0).abs() < 1e-12);
            }
            assert!(r.dir.dot(&r.dir_dx) > 0.0);
            assert!(r.ddir_dx.dot(&r.dir).abs() < 1e-12);
        }
    }

    #[test]
    fn half_pixel_angular_offset() {
        let f = 200.0;
        let cam = front_camera(64, 64, f);
        let r = generate_ray(&cam, 32, 32, None).unwrap();
        let angle = r.dir.cross(&r.dir_dx).norm().atan2(r.dir.dot(&r.dir_dx));
        let a = Vec3::new(0.5, -0.5, -f);
        let b = Vec3::new(1.0, -0.5, -f);
        let exact = a.cross(&b).norm().atan2(a.dot(&b));
        assert!((angle - exact).abs() < 1e-9, "{angle} vs {exact}");
        assert!((angle - 0.5 / f).abs() / (0.5 / f) < 1e-3);
    }

    #[test]
    fn project_inverts_generate() {
        let cam = Camera::look_at(
            Vec3::new(0.5, -3.0, 2.0),
            Vec3::new(0.1, 0.0, 0.2),
            Vec3::z(),
            50,
            40,
            0.7,
        )
        .unwrap();
        let r = generate_ray(&cam, 11, 29, None).unwrap();
        let p = r.at(2.7);
        let px = cam.project(&p).unwrap();
        assert!((px[0] - 11.5).abs() < 1e-9 && (px[1] - 29.5).abs() < 1e-9);
    }

    #[test]
    fn lod_of_known_rho() {
        assert_eq!(lod_from_rho(1.0, 3.0), 0.0);
        assert_eq!(lod_from_rho(8.0, 3.0), 1.0);
        assert_eq!(lod_from_rho(64.0, 3.0), 2.0);
        assert_eq!(lod_from_rho(0.0, 3.0), f64::NEG_INFINITY);
        assert_eq!(lod_from_rho(8.0, 1.0), 3.0);
    }

    #[test]
    fn footprint_matches_closed_form_on_axis() {
        // On the optical axis the world footprint of one pixel at distance t is t / f.
        let f = 100.0;
        let cam = front_camera(65, 65, f);
        let r = generate_ray(&cam, 32, 32, None).unwrap();
        let grid = VoxelGrid::zeros(1, [64, 64, 64], Aabb::centered(1.0)).unwrap();
        let t = 3.0;
        let s = ray_differential_lod(&r, t, &grid);
        let voxel = 2.0 / 64.0;
        let expect = t / f / voxel;
        assert!((s.rho - expect).abs() / expect < 1e-12);
        assert!((s.delta_dx[0] - 0.5 * expect).abs() < 1e-12);
        assert_eq!(s.delta_dx[1], 0.0);
    }
}
