//! Image quality metrics and per-scale aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// `10 log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean absolute difference over all channels.
pub fn mean_abs_error(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data.len() as f64)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity: 11x11 Gaussian window (σ = 1.5), valid
/// region only, computed per channel and averaged, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..3 {
        let pa: Vec<f64> = a.data.iter().skip(c).step_by(3).copied().collect();
        let pb: Vec<f64> = b.data.iter().skip(c).step_by(3).copied().collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let e_aa = filter_valid(&prod(&pa, &pa), w, h, &k);
        let e_bb = filter_valid(&prod(&pb, &pb), w, h, &k);
        let e_ab = filter_valid(&prod(&pa, &pb), w, h, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}

/// Per-scale means and the mean of those means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub per_scale: Vec<(u32, f64)>,
    pub overall: f64,
}

/// Groups `(scale, value)` pairs by scale. Every scale counts equally in
/// `overall`, regardless of how many images it holds.
pub fn aggregate(samples: &[(u32, f64)]) -> Result<Aggregate> {
    if samples.is_empty() {
        return Err(Error::EmptyGroup("no metric values to aggregate".into()));
    }
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &(s, v) in samples {
        groups.entry(s).or_default().push(v);
    }
    let per_scale: Vec<(u32, f64)> = groups
        .into_iter()
        .map(|(s, v)| (s, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let overall = per_scale.iter().map(|p| p.1).sum::<f64>() / per_scale.len() as f64;
    Ok(Aggregate { per_scale, overall })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub scale: u32,
    pub view: usize,
    pub psnr: f64,
    /// Absent when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
}

impl ImageMetrics {
    pub fn compute(pred: &Image, target: &Image, scale: u32, view: usize) -> Result<Self> {
        let ssim = match ssim(pred, target) {
            Ok(v) => Some(v),
            Err(Error::ImageTooSmall(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            scale,
            view,
            psnr: psnr(pred, target)?,
            ssim,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub scale: u32,
    pub count: usize,
    pub psnr: f64,
    pub ssim: Option<f64>,
}

/// Metrics of one scene/variant over a test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scene: String,
    pub variant: String,
    pub images: Vec<ImageMetrics>,
    pub per_scale: Vec<ScaleSummary>,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
}

impl MetricsReport {
    pub fn new(scene: impl Into<String>, variant: impl Into<String>, images: Vec<ImageMetrics>) -> Result<Self> {
        let psnr = aggregate(&images.iter().map(|m| (m.scale, m.psnr)).collect::<Vec<_>>())?;
        let with_ssim: Vec<(u32, f64)> = images.iter().filter_map(|m| m.ssim.map(|s| (m.scale, s))).collect();
        let ssim = if with_ssim.len() == images.len() {
            Some(aggregate(&with_ssim)?)
        } else {
            None
        };
        let per_scale = psnr
            .per_scale
            .iter()
            .enumerate()
            .map(|(i, &(scale, p))| ScaleSummary {
                scale,
                count: images.iter().filter(|m| m.scale == scale).count(),
                psnr: p,
                ssim: ssim.as_ref().map(|a| a.per_scale[i].1),
            })
            .collect();
        Ok(Self {
            scene: scene.into(),
            variant: variant.into(),
            images,
            per_scale,
            mean_psnr: psnr.overall,
            mean_ssim: ssim.map(|a| a.overall),
        })
    }

    pub fn scale_psnr(&self, scale: u32) -> Option<f64> {
        self.per_scale.iter().find(|s| s.scale == scale).map(|s| s.psnr)
    }

    /// Per-image rows followed by per-scale and overall mean rows.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut s = String::from("scene,variant,scale,view,psnr,ssim\n");
        for m in &self.images {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{}",
                self.scene,
                self.variant,
                m.scale,
                m.view,
                m.psnr,
                opt(m.ssim)
            );
        }
        for p in &self.per_scale {
            let _ = writeln!(s, "{},{},{},mean,{:.6},{}", self.scene, self.variant, p.scale, p.psnr, opt(p.ssim));
        }
        let _ = writeln!(
            s,
            "{},{},all,mean,{:.6},{}",
            self.scene,
            self.variant,
            self.mean_psnr,
            opt(self.mean_ssim)
        );
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> Image {
        Image::filled(16, 12, [v; 3])
    }

    #[test]
    fn psnr_formula() {
        assert_eq!(psnr(&constant(0.3), &constant(0.3)).unwrap(), PSNR_CAP);
        assert!((psnr(&constant(0.0), &constant(0.1)).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&constant(0.0), &constant(0.5)).unwrap() - 6.020599913279624).abs() < 1e-9);
        assert!(psnr(&constant(0.0), &Image::new(3, 3)).is_err());
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let p = psnr_from_mse(k as f64 * 0.01);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_constants() {
        let mut img = constant(0.2);
        for i in 0..img.data.len() {
            img.data[i] = ((i * 31) % 17) as f64 / 17.0;
        }
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&constant(0.4), &constant(0.4)).unwrap() - 1.0).abs() < 1e-12);

        let (a, b) = (0.25, 0.75);
        let c1 = 0.01f64 * 0.01;
        let closed = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let got = ssim(&constant(a), &constant(b)).unwrap();
        assert!(got < 1.0);
        assert!((got - closed).abs() < 1e-9, "{got} vs {closed}");
    }

    #[test]
    fn ssim_symmetric_and_rejects_small() {
        let mut a = constant(0.0);
        let mut b = constant(0.0);
        for i in 0..a.data.len() {
            a.data[i] = ((i * 7) % 11) as f64 / 11.0;
            b.data[i] = ((i * 5) % 13) as f64 / 13.0;
        }
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(matches!(
            ssim(&Image::new(10, 20), &Image::new(10, 20)),
            Err(Error::ImageTooSmall(_))
        ));
    }

    #[test]
    fn aggregate_cases() {
        let a = aggregate(&[(1, 30.0)]).unwrap();
        assert_eq!(a.per_scale, vec![(1, 30.0)]);
        assert_eq!(a.overall, 30.0);
        let a = aggregate(&[(2, 5.0), (2, 5.0), (2, 5.0)]).unwrap();
        assert_eq!(a.overall, 5.0);
        let a = aggregate(&[(1, 10.0), (1, 20.0), (8, 40.0)]).unwrap();
        assert_eq!(a.per_scale, vec![(1, 15.0), (8, 40.0)]);
        assert_eq!(a.overall, 27.5);
        assert!(matches!(aggregate(&[]), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![
            ImageMetrics::compute(&constant(0.5), &constant(0.4), 1, 0).unwrap(),
            ImageMetrics::compute(&Image::filled(2, 2, [0.5; 3]), &Image::filled(2, 2, [0.5; 3]), 8, 0).unwrap(),
        ];
        assert!(imgs[1].ssim.is_none());
        let r = MetricsReport::new("oracle", "full", imgs).unwrap();
        assert_eq!(r.mean_ssim, None);
        assert_eq!(r.scale_psnr(8), Some(PSNR_CAP));
        r.write(dir.path(), "metrics").unwrap();
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 + 2 + 1);
        let back: MetricsReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
