use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;
mod manifest;

use error::CliError;

/// Zero-shot blind denoising by fitting a sinusoidal coordinate network.
///
/// All noise levels on the command line are on the 0-255 intensity scale.
#[derive(Debug, Parser)]
#[command(name = "inr-denoise", version)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise a PNG; writes the image, a manifest, a trajectory CSV and optionally a checkpoint.
    Denoise(DenoiseArgs),
    /// Add synthetic Gaussian or Poisson-Gaussian noise to a clean PNG.
    Synth(SynthArgs),
    /// Estimate the noise level of a PNG and print it as JSON.
    Estimate(EstimateArgs),
    /// Print PSNR and MSE between a test image and a reference as JSON.
    Eval(EvalArgs),
    /// Fit a PNG without early stopping and record MSE and PSNR against references.
    Trajectory(TrajectoryArgs),
    /// Render hidden-neuron responses of a network as a contact sheet.
    Features(FeaturesArgs),
    /// Denoise with and without selective weight decay and report both runs.
    CompareDecay(CompareDecayArgs),
}

/// Network and optimizer settings shared by the training commands.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Hidden layers.
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    /// Hidden width: a neuron count or `auto` to scale with the image area.
    #[arg(long, default_value = "auto")]
    pub width: String,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Weight decay on the last two layers.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// Iterations between stopping-criterion checks.
    #[arg(long, default_value_t = 10)]
    pub check_every: usize,
    /// Known noise standard deviation (0-255); skips blind estimation.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 30.0)]
    pub omega0: f64,
    #[arg(long, default_value_t = 30.0)]
    pub omega_hidden: f64,
    /// Random pixels per step instead of the full image.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Noisy input PNG. Defaults to the input recorded in the replayed manifest.
    #[arg(long = "in", required_unless_present = "replay")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Clean reference; adds a PSNR column to the trajectory only.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Also save the network that produced the output.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Re-run with the settings recorded in a denoise manifest.
    #[arg(long, conflicts_with = "clean")]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Gaussian,
    PoissonGaussian,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Gaussian)]
    pub kind: KindArg,
    /// Fixed Gaussian standard deviation (0-255).
    #[arg(long, conflicts_with = "sigma_range")]
    pub sigma: Option<f64>,
    /// Draw the Gaussian standard deviation uniformly from [LO, HI].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub sigma_range: Option<Vec<f64>>,
    /// Fixed Poisson scale (0-255 domain).
    #[arg(long, conflicts_with = "alpha_range")]
    pub alpha: Option<f64>,
    /// Draw the Poisson scale uniformly from [LO, HI]; defaults to 50 100.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub alpha_range: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Also write the JSON (and a manifest) to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub test: PathBuf,
    pub reference: PathBuf,
    /// Also write the JSON (and a manifest) to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    /// Image the network is trained on.
    #[arg(long)]
    pub target: PathBuf,
    /// Reference images as LABEL=PATH; one PSNR column each.
    #[arg(long = "ref", value_name = "LABEL=PATH")]
    pub references: Vec<String>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Trained network; without it a freshly initialized one is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Hidden layers of a fresh network.
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    /// Hidden width of a fresh network.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Neurons sampled per layer.
    #[arg(long, default_value_t = 8)]
    pub neurons: usize,
    /// Side length of each rendered tile.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Output contact sheet PNG (one row per layer).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareDecayArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Clean reference for output PSNRs.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Denoise(args) => commands::denoise(args, seed),
        Command::Synth(args) => commands::synth(args, seed),
        Command::Estimate(args) => commands::estimate(args),
        Command::Eval(args) => commands::eval(args),
        Command::Trajectory(args) => commands::trajectory(args, seed),
        Command::Features(args) => commands::features(args, seed),
        Command::CompareDecay(args) => commands::compare_decay(args, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
