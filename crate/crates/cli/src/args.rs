use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mipvog::render::RenderMode;
use mipvog::voxel::FilterSpec;

#[derive(Debug, Parser)]
#[command(name = "mipvog", version, about = "Multiscale voxel-grid radiance fields: train, render, evaluate, bake")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the analytic oracle scene into a Blender-style dataset.
    GenScene(GenSceneArgs),
    /// Add 1/2, 1/4 and 1/8 box-downsampled copies of every frame.
    MakeMultiscale(MakeMultiscaleArgs),
    /// Train the coarse and fine stages and write checkpoints.
    Train(TrainArgs),
    /// Render views of a dataset split from a checkpoint.
    Render(RenderArgs),
    /// Per-scale PSNR/SSIM of a checkpoint on a split (CSV and JSON).
    Eval(EvalArgs),
    /// Render the per-pixel level-of-detail map of one view.
    LodMap(LodMapArgs),
    /// Mipmapping ablation (four rows) or low-pass filter sweep (--filters).
    Ablate(AblateArgs),
    /// Export a checkpoint to the sparse quantized viewer format.
    Bake(BakeArgs),
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene description (JSON); the built-in scene when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub width: u32,
    #[arg(long, default_value_t = 128)]
    pub height: u32,
    /// Horizontal field of view in radians.
    #[arg(long, default_value_t = 0.7)]
    pub fov_x: f64,
    /// Orbit radius of the cameras.
    #[arg(long, default_value_t = 3.5)]
    pub radius: f64,
    #[arg(long, default_value_t = 24)]
    pub n_train: usize,
    #[arg(long, default_value_t = 8)]
    pub n_test: usize,
    /// Supersamples per pixel.
    #[arg(long, default_value_t = 64)]
    pub spp: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the downsampled scales.
    #[arg(long)]
    pub multiscale: bool,
}

#[derive(Debug, Args)]
pub struct MakeMultiscaleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

/// Hyperparameters: profile, then the JSON config file, then these flags.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// JSON file with any subset of the configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Coarse grid dims: `N` or `X,Y,Z`.
    #[arg(long, value_parser = parse_dims)]
    pub coarse_dims: Option<[usize; 3]>,
    /// Fine grid dims: `N` or `X,Y,Z`.
    #[arg(long, value_parser = parse_dims)]
    pub fine_dims: Option<[usize; 3]>,
    #[arg(long)]
    pub iters_coarse: Option<usize>,
    #[arg(long)]
    pub iters_fine: Option<usize>,
    #[arg(long)]
    pub batch_rays: Option<usize>,
    #[arg(long)]
    pub lr_grid: Option<f64>,
    #[arg(long)]
    pub lr_mlp: Option<f64>,
    /// Final learning-rate multiplier of the exponential decay.
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub alpha_init_coarse: Option<f64>,
    #[arg(long)]
    pub alpha_init_fine: Option<f64>,
    /// Low-pass filter: none, meanK or gaussK.
    #[arg(long)]
    pub filter: Option<FilterSpec>,
    /// Pyramid depth.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub use_mip_train: Option<bool>,
    /// Weight each pixel's loss by its scale squared.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub area_loss: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// LOD = log2(footprint) / divisor.
    #[arg(long)]
    pub lod_divisor: Option<f64>,
    /// Scene bounds `x0,y0,z0,x1,y1,z1`.
    #[arg(long, value_parser = parse_bbox)]
    pub bbox: Option<[f64; 6]>,
    #[arg(long)]
    pub mask_threshold: Option<f64>,
    #[arg(long)]
    pub mask_dilation: Option<usize>,
    #[arg(long)]
    pub mlp_output_bias: Option<f64>,
    /// Save a fine checkpoint every N iterations (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, losses and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint directory (or a training output directory).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset supplying the cameras.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Only this view index (within the chosen scale).
    #[arg(long)]
    pub view: Option<usize>,
    /// Only this scale; all scales when omitted.
    #[arg(long)]
    pub scale: Option<u32>,
    /// color, lod or diffuse.
    #[arg(long, default_value = "color")]
    pub mode: RenderMode,
    /// Sample level 0 only.
    #[arg(long)]
    pub no_mip: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub no_mip: bool,
    /// Directory for `metrics.csv` and `metrics.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene label in the report; defaults to the dataset directory name.
    #[arg(long)]
    pub scene_name: Option<String>,
    /// Variant label in the report.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct LodMapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    #[arg(long, default_value_t = 1)]
    pub scale: u32,
    /// Output PNG (LOD divided by the top level index).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write raw per-pixel LOD values as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the table and per-row metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// Run the filter sweep over these filters instead of the mip ablation.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub filters: Option<Vec<FilterSpec>>,
    #[arg(long)]
    pub scene_name: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BakeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output asset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Blocks whose max per-step alpha is below this are dropped.
    #[arg(long, default_value_t = mipvog::bake::DEFAULT_ALPHA_THRESHOLD)]
    pub alpha_threshold: f64,
    /// Atlas capacity in blocks per level.
    #[arg(long, default_value_t = mipvog::bake::DEFAULT_MAX_BLOCKS)]
    pub max_blocks: usize,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("`{p}` is not a valid number")))
        .collect()
}

pub fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = parse_list(s)?;
    match v.as_slice() {
        [n] => Ok([*n; 3]),
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err("expected N or X,Y,Z".into()),
    }
}

pub fn parse_bbox(s: &str) -> Result<[f64; 6], String> {
    let v: Vec<f64> = parse_list(s)?;
    v.try_into().map_err(|_| "expected x0,y0,z0,x1,y1,z1".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn dims_and_bbox_parsing() {
        assert_eq!(parse_dims("64"), Ok([64; 3]));
        assert_eq!(parse_dims("8,16,32"), Ok([8, 16, 32]));
        assert!(parse_dims("8,16").is_err());
        assert_eq!(parse_bbox("-1,-1,-1,1,1,1"), Ok([-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]));
        assert!(parse_bbox("1,2").is_err());
    }

    #[test]
    fn bool_flags_take_optional_values() {
        let cli = Cli::try_parse_from(["mipvog", "train", "--data", "d", "--out", "o", "--use-mip-train=false", "--area-loss"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!((t.config.use_mip_train, t.config.area_loss), (Some(false), Some(true)));
    }

    #[test]
    fn filter_list_parses_seven_filters() {
        let cli = Cli::try_parse_from([
            "mipvog",
            "ablate",
            "--data",
            "d",
            "--out",
            "o",
            "--filters",
            "none,mean3,mean5,mean7,gauss3,gauss5,gauss7",
        ])
        .unwrap();
        let Command::Ablate(a) = cli.command else { panic!() };
        assert_eq!(a.filters.unwrap().len(), 7);
    }
}
