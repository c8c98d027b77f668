//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "robself", version, about = "Self-supervised super-resolution of misaligned cross-modal image pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Super-resolve a single pair.
    Run(RunArgs),
    /// Optimize every group of a directory and report RMSE/PSNR.
    Bench(BenchArgs),
    /// Generate misaligned groups from aligned high-resolution images.
    Synth(SynthArgs),
    /// Finite-difference gradient checks of every operator and the whole network.
    Gradcheck(GradcheckArgs),
    /// Inspect presets and configuration files.
    Config(ConfigArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Output raster format; `auto` follows the source's storage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    #[default]
    Auto,
    Png,
    Tfm,
}

/// Configuration selection plus per-field overrides.
#[derive(Clone, Debug, Default, Args)]
pub struct ModelArgs {
    /// Named task preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// key=value configuration file (a run manifest works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["re", "de"])]
    pub variant: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long = "level-i")]
    pub level_i: Option<usize>,
    /// Threshold scale, or `none`.
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Floating-point precision of the computation [default: f64].
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Group directory (`source_lr.*`, `guide_x{f}.*`, optional `gt_x{f}.*`).
    #[arg(long, conflicts_with_all = ["source", "guide"])]
    pub pair: Option<PathBuf>,
    #[arg(long, requires = "guide")]
    pub source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    pub guide: Option<PathBuf>,
    #[arg(long, requires = "source")]
    pub gt: Option<PathBuf>,
    /// Component switch: none, no-translator, no-filter, no-both, no-alignment.
    #[arg(long)]
    pub ablate: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: ImageFormat,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory whose subdirectories are pair groups.
    #[arg(long)]
    pub groups: PathBuf,
    /// One component switch, or `table` for all four translator/filter settings.
    #[arg(long, default_value = "none")]
    pub ablate: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Pairs optimized concurrently (capped by ROBSELF_THREADS).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum, default_value_t)]
    pub format: ImageFormat,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    /// Subdirectories holding `hr_source.*` and `hr_guide.*`, or color
    /// images when `--luminance` is given.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Translation range in pixels.
    #[arg(long, default_value_t = 8.0)]
    pub trans: f64,
    /// Rotation range in degrees.
    #[arg(long, default_value_t = 4.0)]
    pub rot: f64,
    /// Corner displacement range as a fraction of the shorter side.
    #[arg(long, default_value_t = 0.02)]
    pub persp: f64,
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    /// Seed of the first group; group k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Treat each input image as a color guide whose luminance is the source.
    #[arg(long)]
    pub luminance: bool,
    /// Center-crop the high-resolution inputs to this square size first.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Modality recorded in each group's sidecar.
    #[arg(long)]
    pub modality: Option<String>,
    #[arg(long, value_enum, default_value_t = ImageFormat::Tfm)]
    pub format: ImageFormat,
}

#[derive(Clone, Debug, Args)]
pub struct GradcheckArgs {
    /// Restrict the suite to one operator (or `model`).
    #[arg(long)]
    pub op: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Entries probed per parameter tensor (0 = all; model cases default to 6).
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ConfigArgs {
    /// Print a preset as a configuration file.
    #[arg(long = "dump-preset")]
    pub dump_preset: Option<String>,
    /// List preset names.
    #[arg(long)]
    pub list: bool,
    /// Validate a configuration file and print its resolved form.
    #[arg(long)]
    pub check: Option<std::path::PathBuf>,
}
