use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Frame, Split};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::image::Image;
use crate::render::WHITE;

/// `transforms_{split}.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aabb: Option<Aabb>,
    pub frames: Vec<FrameEntry>,
}

/// Per-frame record. Optional intrinsics override `camera_angle_x`, which
/// lets one file hold several resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<u32>,
}

fn image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

fn load_frame(dir: &Path, angle_x: f64, entry: &FrameEntry) -> Result<Frame> {
    let path = image_path(dir, &entry.file_path);
    if !path.exists() {
        return Err(Error::Dataset(format!("missing image {}", path.display())));
    }
    let image = Image::load_png(&path, WHITE)?;
    let (w, h) = (image.width, image.height);
    if entry.w.is_some_and(|ew| ew != w) || entry.h.is_some_and(|eh| eh != h) {
        return Err(Error::Dataset(format!(
            "{}: image is {w}x{h} but the frame declares {:?}x{:?}",
            path.display(),
            entry.w,
            entry.h
        )));
    }
    let fx = entry.fl_x.unwrap_or(0.5 * w as f64 / (0.5 * angle_x).tan());
    let camera = Camera::new(
        w,
        h,
        fx,
        entry.fl_y.unwrap_or(fx),
        entry.cx.unwrap_or(0.5 * w as f64),
        entry.cy.unwrap_or(0.5 * h as f64),
        entry.transform_matrix,
    )
    .map_err(|e| Error::Dataset(format!("{}: {e}", entry.file_path)))?;
    Ok(Frame {
        image,
        camera,
        scale: entry.scale.unwrap_or(1),
    })
}

/// Loads one split; returns the frames and any recorded bbox.
pub fn load_split(dir: impl AsRef<Path>, split: &Split) -> Result<(Vec<Frame>, Option<Aabb>)> {
    let dir = dir.as_ref();
    let path = dir.join(format!("transforms_{}.json", split.name()));
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let file: TransformsFile = serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("malformed {}: {e}", path.display())))?;
    let frames = file
        .frames
        .par_iter()
        .map(|entry| load_frame(dir, file.camera_angle_x, entry))
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, file.aabb))
}

/// Loads `transforms_train.json` and `transforms_test.json` from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (train, bbox_a) = load_split(dir, &Split::Train)?;
    let (test, bbox_b) = load_split(dir, &Split::Test)?;
    if train.is_empty() {
        return Err(Error::Dataset(format!("{}: no training frames", dir.display())));
    }
    Ok(Dataset {
        train,
        test,
        bbox: bbox_a.or(bbox_b),
    })
}

fn write_split(dir: &Path, split: &Split, frames: &[Frame], bbox: Option<Aabb>) -> Result<()> {
    let sub = dir.join(split.name());
    fs::create_dir_all(&sub)?;
    let camera_angle_x = frames
        .first()
        .map(|f| 2.0 * (0.5 * f.camera.width as f64 / f.camera.fx).atan())
        .unwrap_or(std::f64::consts::FRAC_PI_4);
    let entries = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let stem = if f.scale == 1 {
                format!("r_{i}")
            } else {
                format!("r_{i}_d{}", f.scale)
            };
            f.image.save_png(sub.join(format!("{stem}.png")))?;
            Ok(FrameEntry {
                file_path: format!("./{}/{stem}", split.name()),
                transform_matrix: f.camera.cam_to_world,
                fl_x: Some(f.camera.fx),
                fl_y: Some(f.camera.fy),
                cx: Some(f.camera.cx),
                cy: Some(f.camera.cy),
                w: Some(f.camera.width),
                h: Some(f.camera.height),
                scale: Some(f.scale),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = TransformsFile {
        camera_angle_x,
        aabb: bbox,
        frames: entries,
    };
    fs::write(
        dir.join(format!("transforms_{}.json", split.name())),
        serde_json::to_string_pretty(&file)?,
    )?;
    Ok(())
}

/// Writes both splits as 8-bit PNGs plus transforms files.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_split(dir, &Split::Train, &dataset.train, dataset.bbox)?;
    write_split(dir, &Split::Test, &dataset.test, dataset.bbox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn frame(i: usize) -> Frame {
        let eye = Vec3::new(3.0 * (i as f64).cos(), 3.0 * (i as f64).sin(), 1.0);
        let camera = Camera::look_at(eye, Vec3::zeros(), Vec3::z(), 8, 6, 0.9).unwrap();
        let mut image = Image::filled(8, 6, [0.25, 0.5, 0.75]);
        image.set(1, 2, [i as f64 / 10.0, 0.0, 1.0]);
        Frame {
            image,
            camera,
            scale: 1,
        }
    }

    #[test]
    fn fx_from_camera_angle() {
        let dir = tempfile::tempdir().unwrap();
        Image::filled(800, 2, [1.0; 3]).save_png(dir.path().join("a.png")).unwrap();
        let entry = FrameEntry {
            file_path: "./a".into(),
            transform_matrix: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            fl_x: None,
            fl_y: None,
            cx: None,
            cy: None,
            w: None,
            h: None,
            scale: None,
        };
        let f = load_frame(dir.path(), std::f64::consts::FRAC_PI_2, &entry).unwrap();
        assert!((f.camera.fx - 400.0).abs() < 1e-9);
        assert_eq!(f.camera.cx, 400.0);
        assert_eq!(f.scale, 1);
    }

    #[test]
    fn round_trip_preserves_cameras() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            train: (0..3).map(frame).collect(),
            test: vec![frame(7)],
            bbox: Some(Aabb::centered(1.0)),
        };
        write_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.bbox, ds.bbox);
        assert_eq!(back.train.len(), 3);
        for (a, b) in ds.train.iter().chain(&ds.test).zip(back.train.iter().chain(&back.test)) {
            assert_eq!(a.camera.width, b.camera.width);
            assert!((a.camera.fx - b.camera.fx).abs() < 1e-6);
            assert!((a.camera.cy - b.camera.cy).abs() < 1e-6);
            for r in 0..4 {
                for c in 0..4 {
                    assert!((a.camera.cam_to_world[r][c] - b.camera.cam_to_world[r][c]).abs() < 1e-6);
                }
            }
            for (x, y) in a.image.data.iter().zip(&b.image.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn missing_and_malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Dataset(_))));
        fs::write(dir.path().join("transforms_train.json"), "{ nope").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Dataset(_))));
        fs::write(
            dir.path().join("transforms_train.json"),
            r#"{"camera_angle_x": 0.7, "frames": [{"file_path": "./x", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        )
        .unwrap();
        assert!(matches!(load_split(dir.path(), &Split::Train), Err(Error::Dataset(_))));
    }

    #[test]
    fn declared_size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            train: vec![frame(0)],
            test: vec![],
            bbox: None,
        };
        write_dataset(dir.path(), &ds).unwrap();
        let path = dir.path().join("transforms_train.json");
        let text = fs::read_to_string(&path).unwrap().replace("\"w\": 8", "\"w\": 9");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Dataset(_))));
    }
}
