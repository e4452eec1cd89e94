use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "gsvs",
    version,
    about = "Patch-wise singular value shrinkage for complex multi-volume data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Denoise a CVOL volume set with a propagated noise model.
    Denoise(DenoiseArgs),
    /// Scan candidate patch aspect ratios and report the predicted error.
    EstimateGamma(GammaArgs),
    /// Generate a synthetic phantom, its noisy version and noise model.
    Simulate(SimulateArgs),
    /// Check noise-only reconstructions against the propagated model.
    ValidateNoise(ValidateArgs),
    /// Simulate and dump one noise singular-value distribution.
    Esd(EsdArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Shrink,
    Truncate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Uniform,
    Invvar,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Spe,
    Jpe,
}

/// Options shared by every command that simulates spectra.
#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input CVOL header.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Noise model descriptor.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Output CVOL header; report and maps go next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Fixed patch aspect ratio M/N.
    #[arg(long, conflicts_with = "scan_gamma")]
    pub gamma: Option<f64>,
    /// Choose the aspect ratio by a predicted-error scan.
    #[arg(long)]
    pub scan_gamma: bool,
    /// Comma-separated scan candidates.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    /// Width of the Gaussian weights in mm.
    #[arg(long)]
    pub gaussian_sigma: Option<f64>,
    #[arg(long)]
    pub no_phase_correction: bool,
    /// Interleaved encodings: separate (spe) or joint (jpe) processing.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Patch center stride in voxels.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Patch center stride of the aspect-ratio scan.
    #[arg(long)]
    pub stride_gamma: Option<usize>,
    /// ESD oversampling factor B.
    #[arg(long = "oversample-B")]
    pub oversample_b: Option<usize>,
    /// Whiten each patch before recovery.
    #[arg(long)]
    pub whitened: bool,
    /// Simulate one ESD per patch even when covariances repeat.
    #[arg(long)]
    pub no_esd_cache: bool,
}

#[derive(Args, Debug, Default, Clone)]
pub struct GammaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Output JSON path; the curve is written next to it as CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<f64>>,
    #[arg(long)]
    pub stride_gamma: Option<usize>,
    #[arg(long = "oversample-B")]
    pub oversample_b: Option<usize>,
    #[arg(long)]
    pub no_phase_correction: bool,
    #[arg(long)]
    pub whitened: bool,
}

#[derive(Args, Debug, Default, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output CSV path; a JSON summary is written next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Number of noise-only reconstructions.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct EsdArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output JSON path; atoms go next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Patch size M.
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Number of volumes N.
    #[arg(long)]
    pub volumes: Option<usize>,
    /// White noise variance (ignored with --noise).
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Take the patch covariance from a noise model instead.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Patch center x,y,z for --noise.
    #[arg(long, value_delimiter = ',')]
    pub center: Option<Vec<usize>>,
    #[arg(long = "oversample-B")]
    pub oversample_b: Option<usize>,
    #[arg(long)]
    pub force_dense: bool,
}
