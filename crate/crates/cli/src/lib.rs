//! `sspose` command-line tool: codebooks, synthetic scene sets, depth
//! pseudo-labels, pose metrics and per-frame refinement.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 data, 5 numeric failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Config, CONFIG_ENV, DEFAULT_CONFIG};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sspose", version, about = "Self-supervised 6D pose refinement toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a rotation codebook and write it in binary form.
    Codebook(CodebookArgs),
    /// Generate a synthetic scene set.
    GenScenes(GenScenesArgs),
    /// Compute depth pseudo-labels for the initial poses of a scene set.
    Pseudolabel(PseudolabelArgs),
    /// Score predicted poses against ground truth.
    Eval(EvalArgs),
    /// Refine initial poses against the self-supervised objective.
    Optimize(OptimizeArgs),
    /// Print the default configuration.
    PrintConfig,
}

#[derive(Debug, Args)]
pub struct CodebookArgs {
    #[arg(long)]
    pub viewpoints: usize,
    #[arg(long)]
    pub inplane: usize,
    /// Attach flattened-rotation embeddings.
    #[arg(long)]
    pub embed: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// sphere, cuboid, cylinder, or catalog to cycle through all three.
    #[arg(long, default_value = "catalog")]
    pub shape: String,
    /// real, synthetic, or alternate.
    #[arg(long, default_value = "real")]
    pub kinds: String,
    /// Std-dev of the initial rotation error, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub noise_rotation: f64,
    /// Std-dev of the relative distance error of the initial pose.
    #[arg(long, default_value_t = 0.0)]
    pub noise_translation: f64,
    /// Std-dev of the image-plane error of the initial center, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise_center: f64,
    /// Offset added to every initial t_z, meters.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub tz_bias: f64,
    /// Erosion radius of the predicted mask, pixels.
    #[arg(long, default_value_t = 0)]
    pub noise_mask_erosion: usize,
    /// Std-dev of additive depth noise, meters.
    #[arg(long, default_value_t = 0.0)]
    pub noise_depth: f64,
    /// Share of the object hidden by the occluder, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub occlusion: f64,
    /// Keep object axes aligned with the camera instead of random rotations.
    #[arg(long)]
    pub fronto: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PseudolabelArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Initial poses; defaults to `init_poses.txt` in the scene directory.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory with `models_info.txt` and `obj_XXXXXX.ply` files, or the set root holding it.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `optimizer.iterations`.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Overrides `seed.aug`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Codebook file; otherwise built from the configured counts.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Output directory for `poses.txt`, `trace.csv` and `metrics.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the command, writing
/// human-readable output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        Command::Codebook(a) => commands::codebook(&a, out),
        Command::GenScenes(a) => commands::gen_scenes(&a, out),
        Command::Pseudolabel(a) => commands::pseudolabel(&a, out),
        Command::Eval(a) => commands::eval(&a, out),
        Command::Optimize(a) => commands::optimize(&a, out),
        Command::PrintConfig => {
            out.write_all(DEFAULT_CONFIG.as_bytes())?;
            Ok(())
        }
    }
}
