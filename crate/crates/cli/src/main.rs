//! `cmrlab`: synthesis, k-space simulation, training, correction, evaluation
//! and gradient verification for CMR motion-artifact experiments.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::failure::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "cmrlab", version, about = "CMR motion-artifact synthesis, correction and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Blur every image of a directory into a paired dataset with a manifest.
    Synth(SynthArgs),
    /// Simulate segmented k-space acquisition with per-cycle rigid shifts.
    KspaceSim(KspaceArgs),
    /// Train the correction network on a manifest of pairs.
    Train(TrainArgs),
    /// Restore the blurred images of a manifest.
    Correct(CorrectArgs),
    /// Score restored images (PSNR, MSSIM, C/B, C/A).
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write synthetic phantom images.
    Phantoms(PhantomArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Blurred copies per input image.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Odd PSF side length.
    #[arg(long, default_value_t = 21)]
    pub kernel_size: usize,
    /// Trajectory length (motion samples per exposure).
    #[arg(long, default_value_t = 32)]
    pub steps: usize,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Circular)]
    pub boundary: BoundaryArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BoundaryArg {
    Circular,
    Replicate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    X,
    Y,
}

#[derive(Debug, Args)]
pub struct KspaceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Cardiac cycles sharing the k-space rows (interleaved).
    #[arg(long, default_value_t = 8)]
    pub cycles: usize,
    /// Largest per-cycle displacement in pixels.
    #[arg(long, default_value_t = 4.0)]
    pub max_shift: f64,
    /// Drift direction of the anatomy.
    #[arg(long, value_enum, default_value_t = AxisArg::Y)]
    pub axis: AxisArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV (default: checkpoint path with `.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub epochs_const: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs_decay: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, default_value_t = 9)]
    pub resblocks: usize,
    #[arg(long, default_value_t = 64)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 64)]
    pub disc_channels: usize,
    #[arg(long, default_value_t = 100.0)]
    pub lambda_gan: f64,
    #[arg(long, default_value_t = 100.0)]
    pub lambda_edge: f64,
    /// Drop the global input-to-output skip connection.
    #[arg(long)]
    pub no_skip: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print a progress line every this many steps (0 = never).
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Cmcn,
    Rl,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for restored images and the updated manifest copy.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Checkpoint for `--method cmcn`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// PSF file for `--method rl`; defaults to each record's own PSF.
    #[arg(long)]
    pub psf: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    /// Name of the manifest copy inside `--out-dir`.
    #[arg(long, default_value = "restored.jsonl")]
    pub manifest_name: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Debug: multiply every analytic gradient by this factor before comparing.
    #[arg(long)]
    pub corrupt: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PhantomKind {
    Shapes,
    DiskRing,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, value_enum, default_value_t = PhantomKind::Shapes)]
    pub kind: PhantomKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("CMRLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("CMRLAB_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::KspaceSim(a) => commands::kspace_sim(&a),
        Command::Train(a) => commands::train(&a),
        Command::Correct(a) => commands::correct(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Phantoms(a) => commands::phantoms(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.kind as u8)
        }
    }
}
