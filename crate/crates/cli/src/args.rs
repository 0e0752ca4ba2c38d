use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gud", version, about = "Diffusion with component-wise bases and noise schedules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the data covariance and store a basis.
    FitBasis(FitBasisArgs),
    /// Train an eps-prediction network with denoising score matching.
    Train(TrainArgs),
    /// Draw samples with the reverse SDE or the probability-flow ODE.
    Sample(SampleArgs),
    /// Negative log-likelihood in bits/dim via the probability-flow ODE.
    Nll(NllArgs),
    /// Generate wide strips by sliding a column-schedule window.
    Extend(ExtendArgs),
    /// Partially noise an image and denoise it again.
    Reconstruct(ReconstructArgs),
    /// Write gamma, log SNR and beta paths of a schedule as CSV.
    ScheduleViz(VizArgs),
    /// Evaluate the likelihood over a grid of schedule parameters.
    Sweep(SweepArgs),
    /// Convert between CSV pixel dumps and GUDIMGS files.
    Convert(ConvertArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Key-value config file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (default: $GUD_OUT_DIR, else the working directory).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// GUDIMGS file, sample container, or synth:normal:D, synth:diag:v1,v2,..,
    /// synth:mix2d, synth:colgauss:H,W.
    #[arg(long)]
    pub data: String,
    /// Number of synthetic samples.
    #[arg(long)]
    pub n_data: Option<usize>,
    /// Quantisation levels of image data.
    #[arg(long)]
    pub quant_levels: Option<u32>,
    /// Images at the end of the file held out as the test split.
    #[arg(long)]
    pub test_count: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ScheduleArgs {
    /// Schedule family: standard, linear, column, haar-column.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Softness across components or levels.
    #[arg(long)]
    pub a: Option<f64>,
    /// Softness across columns.
    #[arg(long)]
    pub b: Option<f64>,
    /// Interpolation between variance (0) and frequency (1) ordering.
    #[arg(long)]
    pub r: Option<f64>,
    /// Minimal denoising level (default -7).
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_denoise: Option<f64>,
    /// Noising level at t = 1 (default: the sigma_min noise floor).
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_noise: Option<f64>,
    /// Minimal sigma at t = 1 (default 0.99).
    #[arg(long)]
    pub sigma_min: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitBasisArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// identity, permutation, pca, fft or haar.
    #[arg(long)]
    pub basis: Option<String>,
    /// Rescale components to unit variance.
    #[arg(long)]
    pub whiten: bool,
    /// Haar levels.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Lower bound on variances used for whitening and labels.
    #[arg(long)]
    pub variance_floor: Option<f64>,
    /// Basis file name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Basis file (default: identity).
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Optimiser steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Batch size (default 128).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate (default 5e-4).
    #[arg(long)]
    pub lr: Option<f64>,
    /// EMA decay (default 0.999).
    #[arg(long)]
    pub ema: Option<f64>,
    /// Hidden width (default 256).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Hidden layers (default 3).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Draw a uniformly from LO,HI for every batch.
    #[arg(long)]
    pub a_range: Option<String>,
    /// Draw b uniformly from LO,HI for every batch.
    #[arg(long)]
    pub b_range: Option<String>,
    /// Draw r uniformly from LO,HI for every batch.
    #[arg(long)]
    pub r_range: Option<String>,
    /// Loss weighting; only sigma2 is supported.
    #[arg(long)]
    pub weighting: Option<String>,
    /// Checkpoint name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ScoreArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use the analytic score of a synthetic --data spec instead of a model.
    #[arg(long)]
    pub exact_score: bool,
    /// Basis file (default: identity).
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Synthetic spec for --exact-score.
    #[arg(long)]
    pub data: Option<String>,
    /// sde or ode.
    #[arg(long)]
    pub sampler: Option<String>,
    /// SDE steps, or fixed ODE steps when given with --sampler ode.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adaptive ODE tolerance (default 1e-4).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NllArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Fixed ODE steps per unit time instead of adaptive integration.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adaptive ODE tolerance (default 1e-4).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Hutchinson probes (default: exact divergence up to 16 dimensions, else 3).
    #[arg(long)]
    pub probes: Option<usize>,
    /// Evaluate at most this many samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// CSV name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Window spec for --exact-score, e.g. synth:colgauss:4,16.
    #[arg(long)]
    pub data: Option<String>,
    /// Columns committed per cycle.
    #[arg(long)]
    pub k: Option<usize>,
    /// Extension cycles.
    #[arg(long)]
    pub cycles: Option<usize>,
    /// SDE steps per unit time (default 500).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of strips.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Which sample of --data to reconstruct.
    #[arg(long)]
    pub index: Option<usize>,
    /// Noising time (default 0.5).
    #[arg(long)]
    pub t_noise: Option<f64>,
    /// Number of variants.
    #[arg(long)]
    pub variants: Option<usize>,
    /// SDE steps per unit time (default 500).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Basis file (default: identity).
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Number of time points, including both ends (default 101).
    #[arg(long)]
    pub points: Option<usize>,
    /// CSV name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Comma-separated values of a.
    #[arg(long)]
    pub a_values: Option<String>,
    /// Comma-separated values of r; combined with every a.
    #[arg(long)]
    pub r_values: Option<String>,
    /// Comma-separated values of b.
    #[arg(long)]
    pub b_values: Option<String>,
    /// Fixed ODE steps per unit time instead of adaptive integration.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adaptive ODE tolerance (default 1e-4).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Evaluate at most this many samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// CSV name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Source file; .csv is read as one image per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Destination file; .csv writes one image per line.
    #[arg(long)]
    pub output: PathBuf,
    /// H,W,C of the CSV images.
    #[arg(long)]
    pub shape: Option<String>,
}
