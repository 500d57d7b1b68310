//! `pandenoise`: simulate noise, denoise with PAN guidance, evaluate, sweep, plot.
//!
//! Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.

mod commands;
mod config;
mod manifest;
mod plot;
mod trace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "pandenoise", version, about = "PAN-guided hyperspectral denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic rank-4 test scene and its PAN image
    Synth(SynthArgs),
    /// Corrupt a clean cube with one of the five noise cases
    Simulate(SimulateArgs),
    /// Restore a noisy cube guided by a PAN image
    Denoise(DenoiseArgs),
    /// Compare a restored cube against a reference
    Evaluate(EvaluateArgs),
    /// Run simulate, denoise and evaluate over a parameter grid
    Sweep(SweepArgs),
    /// Draw a convergence plot from a trace file
    TracePlot(TracePlotArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 128)]
    pub rows: usize,
    #[arg(long, default_value_t = 128)]
    pub cols: usize,
    #[arg(long, default_value_t = 30)]
    pub bands: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Noise overrides. σ values are on the 8-bit scale (divided by 255).
#[derive(Args, Clone, Default)]
pub struct NoiseFlags {
    /// Case 1 σ
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Cases 2-5 σ interval, `lo,hi`
    #[arg(long, value_parser = config::parse_pair)]
    pub sigma_range: Option<[f64; 2]>,
    #[arg(long)]
    pub affected_fraction: Option<f64>,
    #[arg(long, value_parser = config::parse_pair)]
    pub impulse_range: Option<[f64; 2]>,
    #[arg(long, value_parser = config::parse_pair)]
    pub stripe_range: Option<[f64; 2]>,
    #[arg(long, value_parser = config::parse_pair, allow_hyphen_values = true)]
    pub stripe_amplitude: Option<[f64; 2]>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Clean cube (native header, payload or ENVI .hdr)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "case", value_parser = clap::value_parser!(u8).range(1..=5))]
    pub case_id: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a `[noise]` table
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseFlags,
}

/// Solver overrides; unset flags fall back to the config file, then the defaults.
#[derive(Args, Clone, Default)]
pub struct SolverFlags {
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub corr_window: Option<usize>,
    /// Plain RCTV: every TV weight is 1
    #[arg(long)]
    pub unit_weights: bool,
    /// TOML file with a `[solver]` table
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Grayscale PNG or single-band cube
    #[arg(long)]
    pub pan: PathBuf,
    /// Ground truth; adds PSNR and SAM columns to the trace
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub restored: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value = "restored")]
    pub label: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Q,
    Beta,
    Lambda,
    Tau,
    Rank,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub grid: Vec<f64>,
    #[arg(long = "case", value_parser = clap::value_parser!(u8).range(1..=5))]
    pub case_id: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clean cube
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub noise: NoiseFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args)]
pub struct TracePlotArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<pandenoise::Error> for Failure {
    fn from(e: pandenoise::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.into())
        } else {
            Failure::Input(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<pandenoise::Error>() {
            Some(inner) if inner.is_numerical() => Failure::Numerical(e),
            _ => Failure::Input(e),
        }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Denoise(a) => commands::denoise(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::TracePlot(a) => commands::trace_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(e) | Failure::Numerical(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
