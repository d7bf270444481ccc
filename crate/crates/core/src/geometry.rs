//! Axis-aligned boxes and slab intersection.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// World-space axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn unit() -> Self {
        Self {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }

    /// The symmetric box `[-h, h]^3`.
    pub fn centered(half: f64) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            let ext = self.max[a] - self.min[a];
            if !(ext > 0.0) || !ext.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "bbox extent on axis {a} must be positive, got {ext}"
                )));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn min_vec(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max_vec(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn center(&self) -> Vec3 {
        (self.min_vec() + self.max_vec()) * 0.5
    }

    /// Maps a world point to unit coordinates, or `None` if it lies outside the box.
    pub fn world_to_unit(&self, p: &Vec3) -> Option<[f64; 3]> {
        let u = self.world_to_unit_unchecked(p);
        if u.iter().all(|c| (0.0..=1.0).contains(c)) {
            Some(u)
        } else {
            None
        }
    }

    pub fn world_to_unit_unchecked(&self, p: &Vec3) -> [f64; 3] {
        let ext = self.extent();
        [
            (p.x - self.min[0]) / ext[0],
            (p.y - self.min[1]) / ext[1],
            (p.z - self.min[2]) / ext[2],
        ]
    }

    pub fn unit_to_world(&self, u: [f64; 3]) -> Vec3 {
        let ext = self.extent();
        Vec3::new(
            self.min[0] + u[0] * ext[0],
            self.min[1] + u[1] * ext[1],
            self.min[2] + u[2] * ext[2],
        )
    }

    /// Slab-method intersection of `origin + t * dir`, clamped to `t >= 0`.
    ///
    /// Returns `None` on a miss.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = origin[a];
            let d = dir[a];
            if d == 0.0 {
                if o < self.min[a] || o > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let mut ta = (self.min[a] - o) * inv;
            let mut tb = (self.max[a] - o) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        if t0 < t1 {
            Some((t0, t1))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_to_unit_examples() {
        let unit = Aabb::unit();
        assert_eq!(
            unit.world_to_unit(&Vec3::new(0.5, 0.5, 0.5)),
            Some([0.5, 0.5, 0.5])
        );
        let b = Aabb::centered(1.0);
        assert_eq!(
            b.world_to_unit(&Vec3::new(0.0, 0.0, 0.0)),
            Some([0.5, 0.5, 0.5])
        );
        assert_eq!(b.world_to_unit(&Vec3::new(2.0, 0.0, 0.0)), None);
    }

    #[test]
    fn rejects_degenerate_box() {
        assert!(Aabb::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(Aabb::new([0.0; 3], [1.0, 1.0, -1.0]).is_err());
    }

    #[test]
    fn slab_axis_aligned() {
        let b = Aabb::unit();
        let hit = b
            .intersect(&Vec3::new(-2.0, 0.5, 0.5), &Vec3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!(hit, (2.0, 3.0));
    }

    #[test]
    fn slab_from_inside_starts_at_zero() {
        let b = Aabb::centered(1.0);
        let d = Vec3::new(0.3, -0.5, 0.8).normalize();
        let (t0, t1) = b.intersect(&Vec3::zeros(), &d).unwrap();
        assert_eq!(t0, 0.0);
        assert!(t1 > 0.0);
    }

    #[test]
    fn slab_miss() {
        let b = Aabb::unit();
        assert!(b
            .intersect(&Vec3::new(-2.0, 2.0, 0.5), &Vec3::new(1.0, 0.0, 0.0))
            .is_none());
        // Box behind the origin.
        assert!(b
            .intersect(&Vec3::new(2.0, 0.5, 0.5), &Vec3::new(1.0, 0.0, 0.0))
            .is_none());
    }
}
