use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dualrs_core::Parameterization;

/// Dual reversed rolling-shutter simulation and global-shutter extraction.
#[derive(Debug, Parser)]
#[command(name = "dualrs", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a dual RS pair and ground-truth GS frames from a manifest.
    Synth(SynthArgs),
    /// Extract a GS sequence from a dual RS pair.
    Extract(ExtractArgs),
    /// Compare extracted frames with ground truth.
    Eval(CompareArgs),
    /// Render the readout-ambiguity scenes and report their differences.
    Ambiguity(AmbiguityArgs),
    /// Row-wise error profile against the time distance to the nearest input row.
    ProfileRows(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides the seed of a procedural scene.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub misalign_rows: Option<i32>,
    #[arg(long)]
    pub n_frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamKind {
    Const,
    Affine,
    Dense,
}

impl From<ParamKind> for Parameterization {
    fn from(k: ParamKind) -> Self {
        match k {
            ParamKind::Const => Parameterization::GlobalConst,
            ParamKind::Affine => Parameterization::GlobalAffine,
            ParamKind::Dense => Parameterization::Dense,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Top-to-bottom capture (PNG or .drsc).
    #[arg(long)]
    pub t2b: PathBuf,
    /// Bottom-to-top capture (PNG or .drsc).
    #[arg(long)]
    pub b2t: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub n_frames: usize,
    #[arg(long, value_enum, default_value_t = ParamKind::Const)]
    pub param: ParamKind,
    /// Comma-separated pyramid scales ending at 1.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Iteration budget per scale.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lambda_v: Option<f64>,
    /// Velocity cube (N x H x W x 2) to use instead of estimating one.
    #[arg(long)]
    pub oracle_velocity: Option<PathBuf>,
    /// Delay of the b2t capture in rows.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub misalign_rows: i32,
    /// Row readout in seconds; only affects the reported instants.
    #[arg(long, default_value_t = 87e-6)]
    pub row_readout: f64,
    /// Exposure midpoint in seconds; only affects the reported instants.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub midpoint: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Extracted frames: a directory of images or a .drsc cube.
    #[arg(long)]
    pub outputs: PathBuf,
    /// Ground-truth frames: a directory of images or a .drsc cube.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AmbiguityArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub compare: CompareArgs,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub misalign_rows: i32,
}
