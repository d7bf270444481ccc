use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use mipvog::bake::{bake, save_baked, BakeConfig};
use mipvog::dataset::{
    generate_oracle_dataset, load_dataset, write_dataset, Dataset, Frame, OracleScene, OracleViews, Split,
};
use mipvog::geometry::Aabb;
use mipvog::pipeline::{ablation_csv, ablation_table, evaluate, filter_ablation, mip_ablation};
use mipvog::render::{render_image, render_lod_values, RenderMode, RenderOptions, Scene};
use mipvog::train::{extract_mask, load_checkpoint, save_checkpoint, Stage, TrainConfig, Trainer};

use crate::args::*;

/// Why a command failed; selects the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let log = Log { quiet: cli.quiet };
    match cli.command {
        Command::GenScene(a) => gen_scene(a, log),
        Command::MakeMultiscale(a) => make_multiscale(a, log),
        Command::Train(a) => train(a, log),
        Command::Render(a) => render(a, log),
        Command::Eval(a) => eval(a, log),
        Command::LodMap(a) => lod_map(a, log),
        Command::Ablate(a) => ablate(a, log),
        Command::Bake(a) => bake_cmd(a, log),
    }
}

#[derive(Clone, Copy)]
struct Log {
    quiet: bool,
}

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Progress line every 100 iterations and at the end of a stage.
    fn progress(&self, tag: &str, t: &Trainer, loss: f64) {
        let total = match t.stage {
            Stage::Coarse => t.config.iters_coarse,
            Stage::Fine => t.config.iters_fine,
        };
        if t.iteration.is_multiple_of(100) || t.iteration == total {
            self.info(format!("[{tag}] {}/{total} loss {loss:.6}", t.iteration));
        }
    }
}

/// Profile, then the JSON config file, then explicit flags.
pub fn resolve_config(a: &ConfigArgs) -> Result<TrainConfig, Failure> {
    let base = match a.profile {
        Profile::Desk => TrainConfig::desk(),
        Profile::Paper => TrainConfig::paper(),
    };
    let mut cfg = base;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overrides: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let serde_json::Value::Object(overrides) = overrides else {
            return Err(usage(format!("{} must hold a JSON object", path.display())));
        };
        let serde_json::Value::Object(mut merged) = serde_json::to_value(&cfg)? else {
            unreachable!("config serializes to an object")
        };
        for (k, v) in overrides {
            if !merged.contains_key(&k) {
                return Err(usage(format!("unknown config field `{k}` in {}", path.display())));
            }
            merged.insert(k, v);
        }
        cfg = serde_json::from_value(serde_json::Value::Object(merged))
            .with_context(|| format!("invalid config in {}", path.display()))?;
    }
    macro_rules! set {
        ($($f:ident),*) => {$(if let Some(v) = a.$f.clone() { cfg.$f = v; })*};
    }
    set!(
        coarse_dims, fine_dims, iters_coarse, iters_fine, batch_rays, lr_grid, lr_mlp, lr_decay,
        alpha_init_coarse, alpha_init_fine, filter, levels, use_mip_train, area_loss, seed, lod_divisor,
        mask_threshold, mask_dilation, mlp_output_bias, checkpoint_every
    );
    if let Some(b) = a.bbox {
        cfg.bbox = Some(Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]).map_err(|e| usage(e.to_string()))?);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn load_data(dir: &Path) -> anyhow::Result<Dataset> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

/// Accepts a checkpoint directory or a training output holding `fine/`.
fn load_scene(path: &Path) -> anyhow::Result<Scene> {
    let dir = if path.join("header.json").exists() {
        path.to_path_buf()
    } else {
        path.join("fine")
    };
    Ok(load_checkpoint(&dir)
        .with_context(|| format!("loading checkpoint {}", dir.display()))?
        .scene)
}

/// Frames of one split with their per-scale view index, optionally filtered.
fn select_frames(ds: &Dataset, split: SplitArg, scale: Option<u32>, view: Option<usize>) -> Vec<(usize, &Frame)> {
    let mut counters = std::collections::BTreeMap::<u32, usize>::new();
    ds.frames(&split_of(split))
        .iter()
        .filter_map(|f| {
            let c = counters.entry(f.scale).or_default();
            let v = *c;
            *c += 1;
            let keep = scale.is_none_or(|s| s == f.scale) && view.is_none_or(|w| w == v);
            keep.then_some((v, f))
        })
        .collect()
}

fn dir_name(p: &Path) -> String {
    p.canonicalize()
        .ok()
        .and_then(|c| c.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "scene".into())
}

fn gen_scene(a: GenSceneArgs, log: Log) -> Outcome {
    let scene = match &a.scene {
        Some(p) => OracleScene::load(p).with_context(|| format!("loading scene {}", p.display()))?,
        None => OracleScene::default_scene(),
    };
    let views = OracleViews {
        width: a.width,
        height: a.height,
        fov_x: a.fov_x,
        radius: a.radius,
        n_train: a.n_train,
        n_test: a.n_test,
        spp: a.spp,
        seed: a.seed,
    };
    if a.multiscale && (!a.width.is_multiple_of(8) || !a.height.is_multiple_of(8)) {
        return Err(usage("--multiscale needs width and height divisible by 8"));
    }
    let mut ds = generate_oracle_dataset(&scene, &views)?;
    if a.multiscale {
        ds = ds.multiscale()?;
    }
    write_dataset(&a.out, &ds)?;
    scene.save(a.out.join("scene.json"))?;
    log.info(format!(
        "wrote {} train / {} test frames to {}",
        ds.train.len(),
        ds.test.len(),
        a.out.display()
    ));
    Ok(())
}

fn make_multiscale(a: MakeMultiscaleArgs, log: Log) -> Outcome {
    let ds = load_data(&a.input)?;
    let single = |f: &[Frame]| f.iter().all(|f| f.scale == 1);
    if !single(&ds.train) || !single(&ds.test) {
        return Err(usage(format!("{} already contains downsampled frames", a.input.display())));
    }
    let ms = ds.multiscale()?;
    write_dataset(&a.out, &ms)?;
    log.info(format!("wrote {} train / {} test frames to {}", ms.train.len(), ms.test.len(), a.out.display()));
    Ok(())
}

fn train(a: TrainArgs, log: Log) -> Outcome {
    let cfg = resolve_config(&a.config)?;
    let ds = load_data(&a.data)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let mut losses = String::from("stage,iteration,loss\n");
    let fine_dir = a.out.join("fine");

    let mut coarse = Trainer::coarse(&ds, &cfg)?;
    coarse.run(cfg.iters_coarse, |t, l| {
        let _ = writeln!(losses, "coarse,{},{l}", t.iteration);
        log.progress("coarse", t, l);
        Ok(())
    })?;
    save_checkpoint(a.out.join("coarse"), &coarse.checkpoint())?;
    let mask = extract_mask(&coarse.scene, cfg.mask_threshold, cfg.mask_dilation)?;
    log.info(format!("mask occupancy {:.3}", mask.occupied_fraction()));

    let mut fine = Trainer::fine(&ds, &cfg, Some(mask))?;
    fine.run(cfg.iters_fine, |t, l| {
        let _ = writeln!(losses, "fine,{},{l}", t.iteration);
        log.progress("fine", t, l);
        if cfg.checkpoint_every > 0 && t.iteration % cfg.checkpoint_every == 0 {
            save_checkpoint(&fine_dir, &t.checkpoint())?;
        }
        Ok(())
    })?;
    save_checkpoint(&fine_dir, &fine.checkpoint())?;
    fs::write(a.out.join("losses.csv"), losses)?;
    log.info(format!("checkpoints written to {}", a.out.display()));
    Ok(())
}

fn render(a: RenderArgs, log: Log) -> Outcome {
    if a.mode == RenderMode::Lod && a.no_mip {
        return Err(usage("--mode lod conflicts with --no-mip"));
    }
    let scene = load_scene(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    let frames = select_frames(&ds, a.split, a.scale, a.view);
    if frames.is_empty() {
        return Err(usage("no frames match the selected split, scale and view"));
    }
    let opts = RenderOptions::inference().with_mip(!a.no_mip);
    let single = frames.len() == 1 && a.out.extension().is_some_and(|e| e == "png");
    if !single {
        fs::create_dir_all(&a.out)?;
    }
    let split = split_of(a.split);
    for (view, f) in frames {
        let img = render_image(&f.camera, &scene, a.mode, &opts)?;
        let path = if single {
            a.out.clone()
        } else {
            a.out.join(format!("{}_{view:03}_d{}.png", split.name(), f.scale))
        };
        img.save_png(&path)?;
        log.info(format!("wrote {}", path.display()));
    }
    Ok(())
}

fn eval(a: EvalArgs, log: Log) -> Outcome {
    let scene = load_scene(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    let frames = ds.frames(&split_of(a.split));
    if frames.is_empty() {
        return Err(usage("the selected split has no frames"));
    }
    let opts = RenderOptions::inference().with_mip(!a.no_mip);
    let variant = a
        .variant
        .unwrap_or_else(|| if a.no_mip { "no-te-mip".into() } else { "full".into() });
    let name = a.scene_name.unwrap_or_else(|| dir_name(&a.data));
    let report = evaluate(&scene, frames, &opts, &name, &variant)?;
    report.write(&a.out, "metrics")?;
    for s in &report.per_scale {
        log.info(format!("scale 1/{}: PSNR {:.3} over {} views", s.scale, s.psnr, s.count));
    }
    println!("{:.6}", report.mean_psnr);
    Ok(())
}

fn lod_map(a: LodMapArgs, log: Log) -> Outcome {
    let scene = load_scene(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    let Some(&(_, frame)) = select_frames(&ds, a.split, Some(a.scale), Some(a.view)).first() else {
        return Err(usage(format!("no view {} at scale {}", a.view, a.scale)));
    };
    let opts = RenderOptions::inference();
    let img = render_image(&frame.camera, &scene, RenderMode::Lod, &opts)?;
    if let Some(parent) = a.out.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save_png(&a.out)?;
    if let Some(csv) = &a.csv {
        let values = render_lod_values(&frame.camera, &scene, &opts)?;
        let mut s = String::from("x,y,lod\n");
        let w = frame.camera.width as usize;
        for (i, v) in values.iter().enumerate() {
            let _ = writeln!(s, "{},{},{v:.6}", i % w, i / w);
        }
        fs::write(csv, s)?;
    }
    log.info(format!("wrote {}", a.out.display()));
    Ok(())
}

fn ablate(a: AblateArgs, log: Log) -> Outcome {
    let cfg = resolve_config(&a.config)?;
    if a.filters.is_some() && a.config.use_mip_train == Some(false) {
        return Err(usage("--filters sweeps full models and conflicts with --use-mip-train=false"));
    }
    let ds = load_data(&a.data)?;
    if ds.test.is_empty() {
        return Err(usage("the dataset has no test frames"));
    }
    let name = a.scene_name.unwrap_or_else(|| dir_name(&a.data));
    let progress = |tag: &str, t: &Trainer, l: f64| {
        log.progress(tag, t, l);
        Ok(())
    };
    let (header, rows) = match &a.filters {
        Some(filters) => ("Filter", filter_ablation(&ds, &cfg, filters, &name, progress)?),
        None => ("Method", mip_ablation(&ds, &cfg, &name, progress)?),
    };
    fs::create_dir_all(&a.out)?;
    let table = ablation_table(header, &rows);
    fs::write(a.out.join("ablation.txt"), &table)?;
    fs::write(a.out.join("ablation.csv"), ablation_csv(&rows))?;
    fs::write(a.out.join("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
    print!("{table}");
    Ok(())
}

fn bake_cmd(a: BakeArgs, log: Log) -> Outcome {
    let scene = load_scene(&a.checkpoint)?;
    let config = BakeConfig {
        alpha_threshold: a.alpha_threshold,
        max_blocks: a.max_blocks,
    };
    let asset = bake(&scene, &config)?;
    let manifest = save_baked(&asset, &a.out)?;
    for (k, l) in manifest.levels.iter().enumerate() {
        log.info(format!(
            "level {k}: dims {:?}, {} of {} blocks",
            l.dims,
            l.num_blocks,
            l.grid.iter().product::<usize>()
        ));
    }
    log.info(format!("wrote {}", a.out.display()));
    Ok(())
}
