// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod export;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;
use crate::export::Format;

/// Overtone (ΔM_S = ±2) resonance toolkit for spin-1 systems.
#[derive(Debug, Parser)]
#[command(name = "overtone", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form overtone powder lineshape against frequency.
    #[command(args_override_self = true)]
    Spectrum(commands::SpectrumArgs),
    /// Overtone powder profile against static field at fixed microwave frequency.
    #[command(args_override_self = true)]
    FieldProfile(commands::FieldProfileArgs),
    /// Powder distribution of overtone nutation frequencies.
    #[command(args_override_self = true)]
    NutationDist(commands::NutationArgs),
    /// Overtone Rabi oscillation for one orientation, or the powder nutation spectrum.
    #[command(args_override_self = true)]
    Rabi(commands::RabiArgs),
    /// Brute-force powder histogram of resonance or nutation frequencies.
    #[command(args_override_self = true)]
    Powder(commands::PowderArgs),
    /// Orientation-dependent triplet polarization, or an echo-detected field sweep.
    #[command(args_override_self = true)]
    Polarization(commands::PolarizationArgs),
    /// Integrated solid effect transfer and buildup over many shots.
    #[command(args_override_self = true)]
    Ise(commands::IseArgs),
    /// Fit a buildup, decay or sinusoid to a two-column CSV trace.
    #[command(args_override_self = true)]
    Fit(commands::FitArgs),
    /// Run the built-in acceptance suites.
    #[command(args_override_self = true)]
    Validate(commands::ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemPreset {
    Pentacene,
    Nv,
    Custom,
}

#[derive(Debug, Clone, Args)]
pub struct SystemArgs {
    /// Zero-field splitting preset.
    #[arg(long, value_enum, default_value = "pentacene")]
    pub system: SystemPreset,
    /// D in MHz (custom system only).
    #[arg(long)]
    pub d_mhz: Option<f64>,
    /// E in MHz (custom system only).
    #[arg(long)]
    pub e_mhz: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FieldArgs {
    /// Static field, T.
    #[arg(long, default_value_t = 0.207)]
    pub b0: f64,
    /// Microwave frequency, GHz.
    #[arg(long)]
    pub mw_ghz: Option<f64>,
    /// Drive strength ω₁/2π, MHz (default depends on the command).
    #[arg(long)]
    pub omega1_mhz: Option<f64>,
    /// Angle between static and drive fields, degrees.
    #[arg(long, default_value_t = 90.0)]
    pub chi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridKind {
    Random,
    Gl,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Orientation count (random) or cos β node count (gl); default depends on the command.
    #[arg(long)]
    pub orientations: Option<usize>,
    #[arg(long, value_enum, default_value = "random")]
    pub grid: GridKind,
    /// Points in each of α and γ for the Gauss–Legendre grid.
    #[arg(long, default_value_t = 8)]
    pub phi_points: usize,
    #[arg(long, default_value_t = overtone_core::validation::DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Output format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Gaussian smoothing σ in axis units (MHz, mT or µs); 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub smooth: f64,
    /// Flat `key = value` run file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ShiftModelArg {
    #[default]
    Full,
    SecondOrder,
}

impl From<ShiftModelArg> for overtone_core::ShiftModel {
    fn from(m: ShiftModelArg) -> Self {
        match m {
            ShiftModelArg::Full => overtone_core::ShiftModel::FullCommutator,
            ShiftModelArg::SecondOrder => overtone_core::ShiftModel::SecondOrder,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("OVERTONE_THREADS") else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("OVERTONE_THREADS = `{value}` is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let argv = config::expand_args(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Err(CliError::Usage) } else { Ok(()) };
        }
    };
    configure_threads()?;
    match cli.command {
        Command::Spectrum(a) => commands::spectrum(&a),
        Command::FieldProfile(a) => commands::field_profile(&a),
        Command::NutationDist(a) => commands::nutation_dist(&a),
        Command::Rabi(a) => commands::rabi(&a),
        Command::Powder(a) => commands::powder(&a),
        Command::Polarization(a) => commands::polarization(&a),
        Command::Ise(a) => commands::ise(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Validate(a) => commands::validate(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::Usage) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
