//! `vtiprop` — drive VTI propagations from TOML configs: run simulations,
//! synthesize models, benchmark and autotune kernels, and query the
//! analytic performance model.
//!
//! Exit codes: 0 success, 2 invalid configuration or parameters,
//! 3 numerical instability, 4 I/O failure.

mod commands;
mod config;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        Self { code: 4, message: format!("{context}: {err}") }
    }
}

impl From<vtiprop_core::Error> for CliError {
    fn from(err: vtiprop_core::Error) -> Self {
        let code = match err {
            vtiprop_core::Error::Instability { .. } => 3,
            vtiprop_core::Error::Sink { .. } => 4,
            _ => 2,
        };
        Self { code, message: err.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "vtiprop", version, about = "Thread-parallel VTI wave propagator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a TOML config.
    Run(RunArgs),
    /// Generate a synthetic model file from the config's [model.synthetic].
    Synth(SynthArgs),
    /// Measure kernel throughput on the configured scenario.
    Bench(BenchArgs),
    /// Sweep cache-block sizes for the blocked kernel and pick the fastest.
    Autotune(AutotuneArgs),
    /// Print the analytic performance model for a stencil configuration.
    Perfmodel(PerfmodelArgs),
    /// Print finite-difference stencil weights.
    Weights(WeightsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Override [run].threads (also: VTIPROP_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Override [run].placement: none|compact|scatter (also: VTIPROP_PLACEMENT).
    #[arg(long)]
    placement: Option<String>,
    /// Override [time].steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Override [kernel].variant: reference|blocked|column.
    #[arg(long)]
    kernel: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML configuration file with [grid] and [model.synthetic].
    #[arg(short, long)]
    config: PathBuf,
    /// Output model file (a .json sidecar is written next to it).
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Timed steps per repetition.
    #[arg(long, default_value_t = 10)]
    steps: u64,
    /// Untimed steps before the clock starts.
    #[arg(long, default_value_t = 2)]
    warmup: u64,
    /// Repetitions; the median is reported.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    placement: Option<String>,
    /// Kernel variant override: reference|blocked|column.
    #[arg(long)]
    kernel: Option<String>,
}

#[derive(Args)]
struct AutotuneArgs {
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long, default_value_t = 10)]
    steps: u64,
    #[arg(long, default_value_t = 2)]
    warmup: u64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Comma-separated block_z candidates.
    #[arg(long, default_value = "8,16,28,32")]
    block_z: String,
    /// Comma-separated block_y candidates.
    #[arg(long, default_value = "8,16,20,32")]
    block_y: String,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    placement: Option<String>,
}

#[derive(Args)]
struct PerfmodelArgs {
    /// Stencil radius in x and y.
    #[arg(long)]
    rxy: usize,
    /// Stencil radius in z.
    #[arg(long)]
    rz: usize,
    /// single|double.
    #[arg(long, default_value = "single")]
    precision: String,
    /// Machine peak, flop/s — with --peak-bandwidth, adds a roofline summary.
    #[arg(long)]
    peak_flops: Option<f64>,
    /// Machine peak memory bandwidth, bytes/s.
    #[arg(long)]
    peak_bandwidth: Option<f64>,
    /// Measured points/s to place on the roofline.
    #[arg(long)]
    points_per_sec: Option<f64>,
    /// Resolvable-mode budget M — adds a resolution estimate.
    #[arg(long)]
    modes: Option<f64>,
    /// Half-order R for the resolution estimate (default: rxy).
    #[arg(long)]
    order: Option<usize>,
    /// Proportionality constant for the resolution estimate.
    #[arg(long, default_value_t = 1.0)]
    cp: f64,
}

#[derive(Args)]
struct WeightsArgs {
    /// Stencil radius in x and y.
    #[arg(long)]
    rxy: usize,
    /// Grid spacing the combined row is scaled for.
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    /// Uniform z spacing — with --rz, also prints a z row.
    #[arg(long)]
    dz: Option<f64>,
    /// z stencil radius.
    #[arg(long)]
    rz: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Synth(args) => commands::synth(args),
        Command::Bench(args) => commands::bench(args),
        Command::Autotune(args) => commands::autotune(args),
        Command::Perfmodel(args) => commands::perfmodel(args),
        Command::Weights(args) => commands::weights(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("vtiprop: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
