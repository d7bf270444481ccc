//! Procedural ground truth: analytic spheres and boxes, rendered with
//! scrambled (0,2)-sequence supersampling.
//!
//! Shading is `albedo * ((1 - lambert) + lambert * max(n.l, 0))` plus a Phong
//! lobe `tint * max(r.v, 0)^exponent`, clamped to `[0, 1]`. The diffuse part
//! is view-independent; only the lobe depends on the viewing direction.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Frame};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

/// Alternating albedo on a world-space 3D checker lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checker {
    /// Edge length of one checker cell.
    pub size: f64,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: [f64; 3],
    #[serde(default)]
    pub lambert: f64,
    #[serde(default)]
    pub specular_tint: [f64; 3],
    #[serde(default = "default_exponent")]
    pub specular_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker: Option<Checker>,
}

fn default_exponent() -> f64 {
    16.0
}

impl Material {
    pub fn flat(albedo: [f64; 3]) -> Self {
        Self {
            albedo,
            lambert: 0.0,
            specular_tint: [0.0; 3],
            specular_exponent: default_exponent(),
            checker: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleScene {
    pub bbox: Aabb,
    #[serde(default = "white")]
    pub background: [f64; 3],
    /// Direction towards the light; normalized on use.
    #[serde(default = "default_light")]
    pub light_dir: [f64; 3],
    pub primitives: Vec<Primitive>,
}

fn white() -> [f64; 3] {
    [1.0; 3]
}

fn default_light() -> [f64; 3] {
    [0.4, -0.5, 0.75]
}

fn in_unit(v: &[f64; 3]) -> bool {
    v.iter().all(|x| (0.0..=1.0).contains(x))
}

impl OracleScene {
    pub fn empty(bbox: Aabb) -> Self {
        Self {
            bbox,
            background: white(),
            light_dir: default_light(),
            primitives: Vec::new(),
        }
    }

    /// Three spheres (one glossy) and a checkered box inside `[-1, 1]^3`.
    pub fn default_scene() -> Self {
        let sphere = |center: [f64; 3], radius: f64, material: Material| Primitive {
            shape: Shape::Sphere { center, radius },
            material,
        };
        Self {
            bbox: Aabb::centered(1.0),
            background: white(),
            light_dir: default_light(),
            primitives: vec![
                sphere(
                    [-0.45, -0.3, 0.25],
                    0.35,
                    Material {
                        lambert: 0.5,
                        ..Material::flat([0.85, 0.25, 0.2])
                    },
                ),
                sphere(
                    [0.4, 0.2, 0.05],
                    0.42,
                    Material {
                        albedo: [0.15, 0.3, 0.75],
                        lambert: 0.5,
                        specular_tint: [0.55, 0.55, 0.55],
                        specular_exponent: 20.0,
                        checker: None,
                    },
                ),
                sphere(
                    [-0.1, 0.45, 0.45],
                    0.22,
                    Material {
                        lambert: 0.4,
                        ..Material::flat([0.2, 0.7, 0.3])
                    },
                ),
                Primitive {
                    shape: Shape::Box {
                        min: [-0.75, -0.7, -0.7],
                        max: [0.75, 0.7, -0.45],
                    },
                    material: Material {
                        lambert: 0.3,
                        checker: Some(Checker {
                            size: 0.125,
                            albedo: [0.15, 0.15, 0.2],
                        }),
                        ..Material::flat([0.95, 0.85, 0.45])
                    },
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        let inside = |p: &[f64; 3]| (0..3).all(|a| p[a] >= self.bbox.min[a] && p[a] <= self.bbox.max[a]);
        for (i, p) in self.primitives.iter().enumerate() {
            let ok = match &p.shape {
                Shape::Sphere { center, radius } => {
                    *radius > 0.0
                        && inside(&[center[0] - radius, center[1] - radius, center[2] - radius])
                        && inside(&[center[0] + radius, center[1] + radius, center[2] + radius])
                }
                Shape::Box { min, max } => (0..3).all(|a| min[a] < max[a]) && inside(min) && inside(max),
            };
            if !ok {
                return Err(Error::InvalidConfig(format!("primitive {i} is degenerate or leaves the bbox")));
            }
            let m = &p.material;
            let colors_ok = in_unit(&m.albedo)
                && in_unit(&m.specular_tint)
                && m.checker.as_ref().is_none_or(|c| in_unit(&c.albedo) && c.size > 0.0);
            if !colors_ok || !(0.0..=1.0).contains(&m.lambert) || m.specular_exponent <= 0.0 {
                return Err(Error::InvalidConfig(format!("primitive {i} has out-of-range material")));
            }
        }
        if !in_unit(&self.background) {
            return Err(Error::InvalidConfig("background outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let scene: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Nearest hit: distance, outward normal, primitive index.
    fn hit(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3, usize)> {
        let mut best: Option<(f64, Vec3, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            let h = match &p.shape {
                Shape::Sphere { center, radius } => hit_sphere(o, d, &Vec3::from(*center), *radius),
                Shape::Box { min, max } => hit_box(o, d, min, max),
            };
            if let Some((t, n)) = h {
                if best.as_ref().is_none_or(|b| t < b.0) {
                    best = Some((t, n, i));
                }
            }
        }
        best
    }

    /// Radiance along a unit-direction ray.
    pub fn trace(&self, o: &Vec3, d: &Vec3) -> [f64; 3] {
        let Some((t, n, i)) = self.hit(o, d) else {
            return self.background;
        };
        let m = &self.primitives[i].material;
        let p = o + d * t;
        let l = Vec3::from(self.light_dir).normalize();
        let ndl = n.dot(&l);
        let albedo = match &m.checker {
            Some(c) => {
                let k: i64 = (0..3).map(|a| (p[a] / c.size).floor() as i64).sum();
                if k.rem_euclid(2) == 0 { m.albedo } else { c.albedo }
            }
            None => m.albedo,
        };
        let shade = (1.0 - m.lambert) + m.lambert * ndl.max(0.0);
        let r = n * (2.0 * ndl) - l;
        let spec = if ndl > 0.0 {
            (-d).dot(&r).max(0.0).powf(m.specular_exponent)
        } else {
            0.0
        };
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (albedo[c] * shade + m.specular_tint[c] * spec).clamp(0.0, 1.0);
        }
        out
    }
}

fn hit_sphere(o: &Vec3, d: &Vec3, c: &Vec3, r: f64) -> Option<(f64, Vec3)> {
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t = if -b - s > 0.0 { -b - s } else { -b + s };
    if t <= 0.0 {
        return None;
    }
    Some((t, (o + d * t - c) / r))
}

fn hit_box(o: &Vec3, d: &Vec3, min: &[f64; 3], max: &[f64; 3]) -> Option<(f64, Vec3)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis0 = 0;
    let mut axis1 = 0;
    for a in 0..3 {
        let inv = 1.0 / d[a];
        let (mut lo, mut hi) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        if lo > t0 {
            t0 = lo;
            axis0 = a;
        }
        if hi < t1 {
            t1 = hi;
            axis1 = a;
        }
    }
    if t0 > t1 || t1 <= 0.0 {
        return None;
    }
    let (t, a) = if t0 > 0.0 { (t0, axis0) } else { (t1, axis1) };
    let mut n = Vec3::zeros();
    n[a] = if t0 > 0.0 { -d[a].signum() } else { d[a].signum() };
    Some((t, n))
}

/// Sobol second dimension, the companion of the van der Corput sequence in a
/// (0,2)-sequence.
fn sobol2(mut i: u32) -> u32 {
    let mut v = 1u32 << 31;
    let mut r = 0;
    while i != 0 {
        if i & 1 == 1 {
            r ^= v;
        }
        i >>= 1;
        v ^= v >> 1;
    }
    r
}

/// Hash-based nested uniform (Owen) scramble of a 32-bit fraction.
fn owen_scramble(x: u32, seed: u32) -> u32 {
    let mut v = x.reverse_bits().wrapping_add(seed);
    v ^= v.wrapping_mul(0x6c50_b47c);
    v ^= v.wrapping_mul(0xb82f_1e52);
    v ^= v.wrapping_mul(0xc7af_e638);
    v ^= v.wrapping_mul(0x8d22_f6e6);
    v.reverse_bits()
}

const INV_2_32: f64 = 1.0 / 4_294_967_296.0;

/// Renders `spp` stratified rays per pixel and box-averages them. Each pixel
/// gets its own random digital shift of a (0,2)-sequence derived from `seed`.
pub fn render_oracle(scene: &OracleScene, cam: &Camera, spp: u32, seed: u64) -> Result<Image> {
    if spp == 0 {
        return Err(Error::InvalidConfig("spp must be at least 1".into()));
    }
    cam.validate()?;
    let r = cam.rotation();
    let origin = cam.origin();
    let rows: Vec<Vec<f64>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(y as u64);
            let mut row = Vec::with_capacity(cam.width as usize * 3);
            for x in 0..cam.width {
                let (sx, sy): (u32, u32) = (rng.random(), rng.random());
                // Averaged as offsets from the first sample so constant
                // pixels come out exact.
                let mut first = [0.0; 3];
                let mut acc = [0.0; 3];
                for i in 0..spp {
                    let jx = owen_scramble(i.reverse_bits(), sx) as f64 * INV_2_32;
                    let jy = owen_scramble(sobol2(i), sy) as f64 * INV_2_32;
                    let px = x as f64 + jx;
                    let py = y as f64 + jy;
                    let dir = (r * Vec3::new((px - cam.cx) / cam.fx, -(py - cam.cy) / cam.fy, -1.0)).normalize();
                    let c = scene.trace(&origin, &dir);
                    if i == 0 {
                        first = c;
                    }
                    for k in 0..3 {
                        acc[k] += c[k] - first[k];
                    }
                }
                row.extend((0..3).map(|k| first[k] + acc[k] / spp as f64));
            }
            row
        })
        .collect();
    Image::from_data(cam.width, cam.height, rows.concat())
}

/// Camera rig for oracle datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleViews {
    pub width: u32,
    pub height: u32,
    pub fov_x: f64,
    pub radius: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub spp: u32,
    pub seed: u64,
}

impl Default for OracleViews {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            fov_x: 0.7,
            radius: 3.5,
            n_train: 24,
            n_test: 8,
            spp: 64,
            seed: 0,
        }
    }
}

/// `n` cameras on a spiral over elevations -25..65 degrees, looking at the
/// origin with `+z` up. `phase` rotates the spiral in azimuth.
pub fn orbit_cameras(views: &OracleViews, n: usize, phase: f64) -> Result<Vec<Camera>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let f = (i as f64 + 0.5) / n as f64;
            let elev = (-25.0 + 90.0 * f).to_radians();
            let az = phase + golden * i as f64;
            let eye = Vec3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()) * views.radius;
            Camera::look_at(eye, Vec3::zeros(), Vec3::z(), views.width, views.height, views.fov_x)
        })
        .collect()
}

/// Full-resolution train/test frames of `scene` (scale 1 only).
pub fn generate_oracle_dataset(scene: &OracleScene, views: &OracleViews) -> Result<Dataset> {
    scene.validate()?;
    let render = |cams: Vec<Camera>, salt: u64| -> Result<Vec<Frame>> {
        cams.into_iter()
            .enumerate()
            .map(|(i, camera)| {
                let seed = views.seed ^ (salt << 32) ^ i as u64;
                Ok(Frame {
                    image: render_oracle(scene, &camera, views.spp, seed)?,
                    camera,
                    scale: 1,
                })
            })
            .collect()
    };
    Ok(Dataset {
        train: render(orbit_cameras(views, views.n_train, 0.0)?, 1)?,
        test: render(orbit_cameras(views, views.n_test, 1.3)?, 2)?,
        bbox: Some(scene.bbox),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn front(w: u32, fov: f64) -> Camera {
        Camera::look_at(Vec3::new(0.0, -3.0, 0.0), Vec3::zeros(), Vec3::z(), w, w, fov).unwrap()
    }

    #[test]
    fn empty_scene_is_white() {
        let img = render_oracle(&OracleScene::empty(Aabb::centered(1.0)), &front(8, 0.5), 4, 0).unwrap();
        assert_eq!(img, Image::filled(8, 8, [1.0; 3]));
    }

    #[test]
    fn full_screen_constant_ignores_spp() {
        let mut scene = OracleScene::empty(Aabb::centered(1.0));
        scene.primitives.push(Primitive {
            shape: Shape::Box {
                min: [-1.0, -0.2, -1.0],
                max: [1.0, 0.2, 1.0],
            },
            material: Material::flat([0.3, 0.4, 0.5]),
        });
        let cam = front(8, 0.3);
        let a = render_oracle(&scene, &cam, 1, 5).unwrap();
        let b = render_oracle(&scene, &cam, 64, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(3, 3), [0.3, 0.4, 0.5]);
    }

    #[test]
    fn deterministic_given_seed() {
        let scene = OracleScene::default_scene();
        let cam = front(16, 0.8);
        assert_eq!(
            render_oracle(&scene, &cam, 4, 3).unwrap(),
            render_oracle(&scene, &cam, 4, 3).unwrap()
        );
    }

    #[test]
    fn sequence_is_stratified() {
        // Every 4x4 grid of elementary intervals gets exactly one of 16 points.
        let mut seen = [false; 16];
        for i in 0..16u32 {
            let x = (i.reverse_bits() >> 30) as usize;
            let y = (sobol2(i) >> 30) as usize;
            seen[y * 4 + x] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sphere_edge_matches_coverage_integral() {
        // Flat sphere seen head-on: pixel value = albedo * coverage + (1 - coverage).
        // Edge error of any N-point set is of order N^(-3/4) in coverage, so
        // the 1/255 bound at 256 spp holds for edge contrast up to about 0.3.
        let albedo = 0.75;
        let r = 0.5;
        let mut scene = OracleScene::empty(Aabb::centered(1.0));
        scene.primitives.push(Primitive {
            shape: Shape::Sphere {
                center: [0.0; 3],
                radius: r,
            },
            material: Material::flat([albedo; 3]),
        });
        let cam = front(32, 0.6);
        let img = render_oracle(&scene, &cam, 256, 11).unwrap();
        // Coverage oracle: for each of many sub-rows, solve the ray/sphere
        // discriminant for the exact hit interval along x.
        let coverage = |x: u32, y: u32| {
            let rows = 4000;
            let mut cov = 0.0;
            for k in 0..rows {
                let py = y as f64 + (k as f64 + 0.5) / rows as f64;
                let b = -(py - cam.cy) / cam.fy;
                // Direction (a, 1, b) before normalization, eye at distance 3.
                // Hit iff 9 - 9/(1 + a^2 + b^2) <= r^2, i.e. a^2 <= 9/(9 - r^2) - 1 - b^2.
                let lim = 9.0 / (9.0 - r * r) - 1.0 - b * b;
                if lim <= 0.0 {
                    continue;
                }
                let half = lim.sqrt() * cam.fx;
                let lo = (cam.cx - half).max(x as f64);
                let hi = (cam.cx + half).min(x as f64 + 1.0);
                cov += (hi - lo).max(0.0);
            }
            cov / rows as f64
        };
        let mut edge_pixels = 0;
        for y in 0..32 {
            for x in 0..32 {
                let cov = coverage(x, y);
                let expected = albedo * cov + (1.0 - cov);
                let got = img.get(x, y)[0];
                assert!((got - expected).abs() <= 1.0 / 255.0, "pixel ({x},{y}): {got} vs {expected}");
                if cov > 0.0 && cov < 1.0 {
                    edge_pixels += 1;
                }
            }
        }
        assert!(edge_pixels > 20);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.json");
        let scene = OracleScene::default_scene();
        scene.save(&p).unwrap();
        assert_eq!(OracleScene::load(&p).unwrap(), scene);

        let mut bad = scene.clone();
        bad.primitives[0].shape = Shape::Sphere {
            center: [0.9, 0.0, 0.0],
            radius: 0.3,
        };
        assert!(bad.validate().is_err());
        let mut bad = scene;
        bad.primitives[1].material.albedo = [1.5, 0.0, 0.0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn box_hit_normals() {
        let (t, n) = hit_box(&Vec3::new(0.0, -3.0, 0.0), &Vec3::y(), &[-1.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(t, 2.0);
        assert_eq!(n, -Vec3::y());
        let (t, n) = hit_box(&Vec3::zeros(), &Vec3::x(), &[-1.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(t, 1.0);
        assert_eq!(n, Vec3::x());
    }
}
