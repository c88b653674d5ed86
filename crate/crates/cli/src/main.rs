//! `spi-unroll` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "spi-unroll", version, about = "Kronecker single-pixel imaging and unrolled reconstruction")]
pub struct Cli {
    /// Master seed for every random choice not fixed by the config.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Measure an image: writes Y plus the operator to a container file.
    Sense(SenseArgs),
    /// Reconstruct an image from a measurement file.
    Reconstruct(ReconstructArgs),
    /// Train the unrolled network from a JSON config.
    Train(TrainArgs),
    /// Evaluate a checkpoint at several compression ratios.
    Evaluate(EvaluateArgs),
    /// Emit per-iteration images and a convergence CSV.
    Trajectory(TrajectoryArgs),
    /// Compare matrix-form and explicit-Φ sampling cost.
    Bench(BenchArgs),
    /// Finite-difference checks of the differentiable operators.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct SenseArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub cr: f64,
    #[arg(long, default_value = "gaussian")]
    pub kind: String,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RestorerArgs {
    #[arg(long, default_value = "identity")]
    pub restorer: String,
    #[arg(long, default_value_t = 0.0)]
    pub strength: f64,
    #[arg(long, default_value_t = 30)]
    pub inner_iters: usize,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub measurement: PathBuf,
    #[arg(long, default_value = "hqs")]
    pub scheme: String,
    #[command(flatten)]
    pub restorer: RestorerArgs,
    /// Iterations; with `--restorer dir` defaults to the checkpoint's K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Penalty for classical restorers.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Output image (.pgm or .png).
    #[arg(long)]
    pub out: PathBuf,
    /// Ground truth for PSNR/SSIM.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Metrics JSON output.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Checkpoint path (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log CSV (overrides the config).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the configured number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated compression ratios (overrides the config).
    #[arg(long, value_delimiter = ',')]
    pub crs: Option<Vec<f64>>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub measurement: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value = "hqs")]
    pub scheme: String,
    #[command(flatten)]
    pub restorer: RestorerArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Emit the ground-truth-conditioned teacher trajectory instead.
    #[arg(long)]
    pub teacher: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub cr: f64,
    /// Deterministic report (storage counts, agreement).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Wall-clock timings (not reproducible by nature).
    #[arg(long)]
    pub timings: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// One of: all, swinsa, chanca, adaconv, gdcnn, ctb, dir, pt-loss.
    #[arg(long, default_value = "all")]
    pub op: String,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                eprintln!("error[E_USAGE]: {first}");
                return ExitCode::from(2);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {text}", e.code());
            ExitCode::FAILURE
        }
    }
}
