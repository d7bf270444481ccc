//! End-to-end workflow: two-stage training, split evaluation and the
//! mipmapping and low-pass filter ablations.

use std::fmt::Write;

use rayon::prelude::*;

use crate::dataset::{Dataset, Frame};
use crate::error::Result;
use crate::image::Image;
use crate::metrics::{ImageMetrics, MetricsReport};
use crate::render::{render_image, RenderMode, RenderOptions, Scene};
use crate::train::{extract_mask, CoarseResult, FineResult, TrainConfig, Trainer};
use crate::voxel::FilterSpec;

/// Both stages' outputs.
#[derive(Debug, Clone)]
pub struct Trained {
    pub coarse: CoarseResult,
    pub fine: FineResult,
}

/// Runs the coarse stage, extracts its occupancy mask and returns it with the
/// trained coarse scene. `progress` is called after every step.
pub fn run_coarse(
    dataset: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(&Trainer, f64) -> Result<()>,
) -> Result<CoarseResult> {
    let mut t = Trainer::coarse(dataset, config)?;
    let losses = t.run(config.iters_coarse, &mut progress)?;
    let mask = extract_mask(&t.scene, config.mask_threshold, config.mask_dilation)?;
    Ok(CoarseResult {
        scene: t.scene,
        mask,
        losses,
    })
}

/// Runs the fine stage inside `coarse`'s mask.
pub fn run_fine(
    dataset: &Dataset,
    config: &TrainConfig,
    coarse: &CoarseResult,
    mut progress: impl FnMut(&Trainer, f64) -> Result<()>,
) -> Result<FineResult> {
    let mut t = Trainer::fine(dataset, config, Some(coarse.mask.clone()))?;
    let losses = t.run(config.iters_fine, &mut progress)?;
    Ok(FineResult { scene: t.scene, losses })
}

pub fn train_full(
    dataset: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(&Trainer, f64) -> Result<()>,
) -> Result<Trained> {
    let coarse = run_coarse(dataset, config, &mut progress)?;
    let fine = run_fine(dataset, config, &coarse, &mut progress)?;
    Ok(Trained { coarse, fine })
}

/// Color renders of `frames`, in order.
pub fn render_frames(scene: &Scene, frames: &[Frame], opts: &RenderOptions) -> Result<Vec<Image>> {
    frames
        .iter()
        .map(|f| render_image(&f.camera, scene, RenderMode::Color, opts))
        .collect()
}

/// PSNR/SSIM of `scene` on `frames`; `view` numbers frames within each scale.
pub fn evaluate(
    scene: &Scene,
    frames: &[Frame],
    opts: &RenderOptions,
    scene_name: &str,
    variant: &str,
) -> Result<MetricsReport> {
    let renders = render_frames(scene, frames, opts)?;
    let mut counters = std::collections::BTreeMap::<u32, usize>::new();
    let jobs: Vec<(usize, &Frame, &Image)> = frames
        .iter()
        .zip(&renders)
        .map(|(f, r)| {
            let view = counters.entry(f.scale).or_default();
            *view += 1;
            (*view - 1, f, r)
        })
        .collect();
    let images = jobs
        .par_iter()
        .map(|(view, f, r)| ImageMetrics::compute(r, &f.image, f.scale, *view))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::new(scene_name, variant, images)
}

pub const ROW_FULL: &str = "Ours";
pub const ROW_NO_TE: &str = "Ours w/o te-mip";
pub const ROW_NO_TR: &str = "Ours w/o tr-mip";
pub const ROW_NO_BOTH: &str = "Ours w/o tr-mip te-mip";

/// The four mipmapping-ablation rows in table order: without both, without
/// training mip, without test mip, full model.
///
/// The coarse stage has a single level, so it is trained once and shared.
pub fn mip_ablation(
    dataset: &Dataset,
    config: &TrainConfig,
    scene_name: &str,
    mut progress: impl FnMut(&str, &Trainer, f64) -> Result<()>,
) -> Result<Vec<MetricsReport>> {
    let coarse = run_coarse(dataset, config, |t, l| progress("coarse", t, l))?;
    let mut rows = Vec::with_capacity(4);
    for use_mip_train in [false, true] {
        let cfg = TrainConfig {
            use_mip_train,
            ..config.clone()
        };
        let tag = if use_mip_train { "tr-mip" } else { "no tr-mip" };
        let fine = run_fine(dataset, &cfg, &coarse, |t, l| progress(tag, t, l))?;
        let (no_te, with_te) = if use_mip_train {
            (ROW_NO_TE, ROW_FULL)
        } else {
            (ROW_NO_BOTH, ROW_NO_TR)
        };
        for (name, use_mip) in [(no_te, false), (with_te, true)] {
            let opts = RenderOptions::inference().with_mip(use_mip);
            rows.push(evaluate(&fine.scene, &dataset.test, &opts, scene_name, name)?);
        }
    }
    Ok(rows)
}

/// One full model per filter, evaluated with mip on. The coarse stage is
/// shared because it has no pyramid to filter.
pub fn filter_ablation(
    dataset: &Dataset,
    config: &TrainConfig,
    filters: &[FilterSpec],
    scene_name: &str,
    mut progress: impl FnMut(&str, &Trainer, f64) -> Result<()>,
) -> Result<Vec<MetricsReport>> {
    let coarse = run_coarse(dataset, config, |t, l| progress("coarse", t, l))?;
    filters
        .iter()
        .map(|&filter| {
            let cfg = TrainConfig {
                filter,
                ..config.clone()
            };
            let name = filter.to_string();
            let fine = run_fine(dataset, &cfg, &coarse, |t, l| progress(&name, t, l))?;
            evaluate(&fine.scene, &dataset.test, &RenderOptions::inference(), scene_name, &name)
        })
        .collect()
}

fn scale_label(s: u32) -> String {
    if s == 1 {
        "Full Res".into()
    } else {
        format!("1/{s} Res")
    }
}

/// Plain-text PSNR table with one row per report and one column per scale.
pub fn ablation_table(header: &str, rows: &[MetricsReport]) -> String {
    let mut scales: Vec<u32> = rows.iter().flat_map(|r| r.per_scale.iter().map(|s| s.scale)).collect();
    scales.sort_unstable();
    scales.dedup();
    let width = rows.iter().map(|r| r.variant.len()).chain([header.len()]).max().unwrap_or(0);
    let mut out = format!("{header:<width$}");
    for &s in &scales {
        let _ = write!(out, " | {:>8}", scale_label(s));
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<width$}", r.variant);
        for &s in &scales {
            match r.scale_psnr(s) {
                Some(p) => {
                    let _ = write!(out, " | {p:>8.3}");
                }
                None => out.push_str(" |         "),
            }
        }
        out.push('\n');
    }
    out
}

/// CSV with columns `variant,scale,psnr,ssim` from every report's per-scale means.
pub fn ablation_csv(rows: &[MetricsReport]) -> String {
    let mut out = String::from("variant,scale,psnr,ssim\n");
    for r in rows {
        for s in &r.per_scale {
            let ssim = s.ssim.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.6},{}", r.variant, s.scale, s.psnr, ssim);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ImageMetrics;

    fn report(variant: &str, psnr: &[(u32, f64)]) -> MetricsReport {
        let images = psnr
            .iter()
            .map(|&(scale, psnr)| ImageMetrics {
                scale,
                view: 0,
                psnr,
                ssim: None,
            })
            .collect();
        MetricsReport::new("s", variant, images).unwrap()
    }

    #[test]
    fn table_has_one_line_per_row_and_scale_columns() {
        let rows = [report("a", &[(1, 30.0), (8, 27.5)]), report("longer name", &[(1, 29.0)])];
        let t = ablation_table("Method", &rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("Full Res") && lines[0].contains("1/8 Res"));
        assert!(lines[1].contains("30.000") && lines[1].contains("27.500"));
        assert!(!lines[2].contains("27.500"));
        assert_eq!(ablation_csv(&rows).lines().count(), 4);
    }
}
