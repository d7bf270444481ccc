use super::Frame;
use crate::error::{Error, Result};
use crate::image::Image;

/// Downsampling factors emitted for every full-resolution frame.
pub const SCALES: [u32; 4] = [1, 2, 4, 8];

/// `s x s` block mean.
///
/// Power-of-two factors are computed as repeated 2x halving with pairwise
/// sums, so downsampling by 2 twice equals downsampling by 4 bit for bit.
pub fn box_downsample(img: &Image, s: u32) -> Result<Image> {
    if s == 0 || !img.width.is_multiple_of(s) || !img.height.is_multiple_of(s) {
        return Err(Error::Dataset(format!(
            "{}x{} image is not divisible by {s}",
            img.width, img.height
        )));
    }
    if s.is_power_of_two() {
        let mut out = img.clone();
        for _ in 0..s.trailing_zeros() {
            out = halve(&out);
        }
        return Ok(out);
    }
    let (w, h) = (img.width / s, img.height / s);
    let inv = 1.0 / (s * s) as f64;
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // Offsets from the first pixel keep constant blocks exact.
            let first = img.get(x * s, y * s);
            let mut acc = [0.0; 3];
            for dy in 0..s {
                for dx in 0..s {
                    let p = img.get(x * s + dx, y * s + dy);
                    for c in 0..3 {
                        acc[c] += p[c] - first[c];
                    }
                }
            }
            out.set(x, y, [0, 1, 2].map(|c| first[c] + acc[c] * inv));
        }
    }
    Ok(out)
}

fn halve(img: &Image) -> Image {
    let (w, h) = (img.width / 2, img.height / 2);
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let [a, b, c, d] = [(0, 0), (1, 0), (0, 1), (1, 1)].map(|(dx, dy)| img.get(2 * x + dx, 2 * y + dy));
            out.set(x, y, [0, 1, 2].map(|k| ((a[k] + b[k]) + (c[k] + d[k])) * 0.25));
        }
    }
    out
}

/// Expands each full-resolution frame into scales 1, 2, 4 and 8 with
/// intrinsics divided accordingly. Frames already downsampled are rejected.
pub fn make_multiscale(frames: &[Frame]) -> Result<Vec<Frame>> {
    let mut out = Vec::with_capacity(frames.len() * SCALES.len());
    for &s in &SCALES {
        for f in frames {
            if f.scale != 1 {
                return Err(Error::Dataset(format!(
                    "make_multiscale expects full-resolution frames, got scale {}",
                    f.scale
                )));
            }
            if f.camera.width % 8 != 0 || f.camera.height % 8 != 0 {
                return Err(Error::Dataset(format!(
                    "{}x{} frames are not divisible by 8",
                    f.camera.width, f.camera.height
                )));
            }
            let image = if s == 1 { f.image.clone() } else { box_downsample(&f.image, s)? };
            out.push(Frame {
                image,
                camera: f.camera.scaled(s),
                scale: s,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::geometry::Vec3;

    #[test]
    fn block_mean_and_constants() {
        let img = Image::from_data(2, 2, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(box_downsample(&img, 2).unwrap().get(0, 0), [0.5; 3]);
        let c = Image::filled(16, 8, [0.3, 0.6, 0.9]);
        assert_eq!(box_downsample(&c, 8).unwrap(), Image::filled(2, 1, [0.3, 0.6, 0.9]));
        assert!(box_downsample(&c, 3).is_err());
    }

    #[test]
    fn checkerboard_cancels() {
        let mut img = Image::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                img.set(x, y, [((x + y) % 2) as f64; 3]);
            }
        }
        assert_eq!(box_downsample(&img, 2).unwrap(), Image::filled(4, 4, [0.5; 3]));
    }

    #[test]
    fn halving_twice_equals_quartering() {
        let data = (0..16 * 16 * 3).map(|i| ((i * 37) % 64) as f64 / 64.0).collect();
        let img = Image::from_data(16, 16, data).unwrap();
        let twice = box_downsample(&box_downsample(&img, 2).unwrap(), 2).unwrap();
        assert_eq!(twice, box_downsample(&img, 4).unwrap());
    }

    #[test]
    fn intrinsics_follow_scale() {
        let cam = Camera::look_at(Vec3::new(0.3, -3.0, 0.8), Vec3::zeros(), Vec3::z(), 64, 48, 0.8).unwrap();
        let frame = Frame {
            image: Image::new(64, 48),
            camera: cam.clone(),
            scale: 1,
        };
        let ms = make_multiscale(&[frame]).unwrap();
        assert_eq!(ms.iter().map(|f| f.scale).collect::<Vec<_>>(), SCALES);
        let p = Vec3::new(0.2, 0.1, -0.3);
        let full = cam.project(&p).unwrap();
        for f in &ms {
            let q = f.camera.project(&p).unwrap();
            let s = f.scale as f64;
            assert!((q[0] - full[0] / s).abs() < 1e-6 && (q[1] - full[1] / s).abs() < 1e-6);
            assert_eq!(f.image.width, 64 / f.scale);
        }
        assert!(make_multiscale(&ms[1..2]).is_err());
    }
}
