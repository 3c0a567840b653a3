use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "n2n", version, about = "Self-supervised denoising with random neighbor sub-sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt clean images with synthetic noise.
    Synthesize(SynthesizeArgs),
    /// Train a denoiser on clean images with online synthetic noise.
    Train(TrainArgs),
    /// Run a trained checkpoint over a directory of noisy images.
    Denoise(DenoiseArgs),
    /// Score test images against clean references (PSNR/SSIM).
    Eval(EvalArgs),
    /// Train once per regularizer weight and compare.
    AblateGamma(AblateGammaArgs),
    /// Train with the fix-location and random neighbor samplers and compare.
    AblateSampler(AblateSamplerArgs),
    /// Monte-Carlo checks of the gap-corrected identity and the ideal-denoiser constraint.
    VerifyTheorem(VerifyTheoremArgs),
    /// Compare network gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Print a generated sub-sampler, one cell per line.
    DumpSampler(DumpSamplerArgs),
    /// Write procedural test scenes.
    GenTextures(GenTexturesArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Full-size defaults: crop 256, width 48, 100 epochs.
    Default,
    /// Crop 64, width 24, 20 epochs.
    Desk,
}

/// Training settings shared by `train` and the ablations. Unset flags fall
/// back to the `--config` file, then to the profile.
#[derive(Clone, Debug, Default, Args)]
pub struct TrainOpts {
    /// Flat `key = value` settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gamma_ramp_epochs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `gauss25`, `gauss5_50`, `poisson30`, `poisson5_50`, ...
    #[arg(long)]
    pub noise: Option<String>,
    /// `neighbor` or `fix-location`.
    #[arg(long)]
    pub sampler: Option<String>,
    /// Sub-sampler cell size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of pooling levels.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Channels per level.
    #[arg(long)]
    pub width: Option<usize>,
    /// Number of 1x1 layers in the head (0: a single 3x3 output layer).
    #[arg(long)]
    pub tail: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    #[arg(long)]
    pub noise: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of clean training images.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of clean validation images (noise is added with a fixed seed).
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Output directory for the checkpoint, optimizer state, log and manifest.
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Output directory of an earlier run to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write the checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateGammaArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 2.0, 8.0, 20.0])]
    pub gammas: Vec<f64>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct AblateSamplerArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct VerifyTheoremArgs {
    /// Trials for the scalar scenario.
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: usize,
    /// Trials for the image-field scenarios.
    #[arg(long, default_value_t = 100_000)]
    pub field_trials: usize,
    /// Trials for the constraint check.
    #[arg(long, default_value_t = 100_000)]
    pub constraint_trials: usize,
    /// Image whose top-left 32x32 crop (first channel) is used; a procedural scene otherwise.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub tail: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Input side length.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    /// Use a single linear 3x3 convolution instead.
    #[arg(long)]
    pub linear: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Parameters to compare; 0 compares all of them.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DumpSamplerArgs {
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value = "neighbor")]
    pub kind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenTexturesArgs {
    #[arg(long = "out")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
