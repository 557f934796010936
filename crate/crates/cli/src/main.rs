//! `subrad`: spectra, sweeps, lattice modes, sensitivity, Jacobians,
//! reconstruction and precision estimates from TOML scene files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl From<subrad_core::Error> for CliError {
    fn from(e: subrad_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

/// `start:stop:n`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected start:stop:n, got '{s}'"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("bad number '{p}': {e}"));
        let points = parts[2].trim().parse::<usize>().map_err(|e| format!("bad point count '{}': {e}", parts[2]))?;
        Ok(Range { start: num(parts[0])?, stop: num(parts[1])?, points })
    }
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n).map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

/// `var=start:stop:n`
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub var: String,
    pub range: Range,
}

impl FromStr for SweepSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (var, range) = s.split_once('=').ok_or_else(|| format!("expected var=start:stop:n, got '{s}'"))?;
        Ok(SweepSpec { var: var.trim().to_string(), range: range.parse()? })
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scene file (TOML)
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Output file stem (defaults to the command name)
    #[arg(long)]
    pub name: Option<String>,
    /// Figure id recorded in the manifest
    #[arg(long)]
    pub figure: Option<String>,
    /// Overrides the scene's imperfection seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WrtArg {
    Detunings,
    Positions,
}

impl From<WrtArg> for subrad_core::sense::Wrt {
    fn from(w: WrtArg) -> Self {
        match w {
            WrtArg::Detunings => subrad_core::sense::Wrt::Detunings,
            WrtArg::Positions => subrad_core::sense::Wrt::Positions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    RbD2,
    SrClock,
}

#[derive(Debug, Parser)]
#[command(name = "subrad", version, about = "Collective scattering and sensing with emitter arrays")]
struct Cli {
    /// Cap on worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transmission spectrum over a detuning grid
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        grid: Range,
        /// Refine the grid where T changes quickly
        #[arg(long)]
        refine: bool,
    },
    /// Peak sensitivity as one scene parameter is varied
    Sweep {
        #[command(flatten)]
        common: Common,
        /// spacing | delta0 | gamma_prime | sigma | missing_fraction | n
        #[arg(long, allow_hyphen_values = true)]
        sweep: SweepSpec,
        /// Realizations averaged per point for stochastic scenes
        #[arg(long, default_value_t = 1)]
        realizations: usize,
        /// Also write every realization
        #[arg(long)]
        keep_realizations: bool,
        /// Relative bracket tolerance of the peak search
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Bright and dark modes of the infinite square lattice
    Lattice {
        /// Spacing grid in wavelengths
        #[arg(long)]
        grid: Range,
        /// Dipole orientation: x | y | z | circular | "dx,dy,dz"
        #[arg(long)]
        polarization: String,
        /// Crossing bisection tolerance in wavelengths
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        figure: Option<String>,
    },
    /// Collective eigenmodes
    Modes {
        #[command(flatten)]
        common: Common,
    },
    /// Coupling matrices J and Gamma
    Dump {
        #[command(flatten)]
        common: Common,
    },
    /// Sensitivity |dT/dDelta_L| curve and its maximum
    Sense {
        #[command(flatten)]
        common: Common,
        /// Defaults to every resonance padded by five linewidths, 2001 points
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<Range>,
        /// Also integrate the gradient norm over detuning
        #[arg(long)]
        integrated: Option<WrtArg>,
    },
    /// Jacobian of T at sample detunings
    Jacobian {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "detunings")]
        wrt: WrtArg,
        /// Comma-separated sample detunings (default: each J_alpha and J_alpha + Gamma_alpha/2)
        #[arg(long, allow_hyphen_values = true)]
        samples: Option<String>,
    },
    /// Infer per-emitter perturbations from transmittance data
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "detunings")]
        wrt: WrtArg,
        /// CSV with columns Delta_L,T
        #[arg(long, conflicts_with = "truth")]
        measured: Option<PathBuf>,
        /// Comma-separated true perturbation; synthesizes data at the default samples
        #[arg(long, allow_hyphen_values = true)]
        truth: Option<String>,
        /// Comma-separated starting guess (default zeros)
        #[arg(long, allow_hyphen_values = true)]
        initial: Option<String>,
    },
    /// Shot-noise frequency precision estimate
    Precision {
        #[arg(long, value_enum, default_value = "rb-d2")]
        preset: PresetArg,
        /// Subradiant linewidth in s^-1 (angular)
        #[arg(long, conflicts_with = "gamma_sub_fraction")]
        gamma_sub: Option<f64>,
        /// Subradiant linewidth as a fraction of the natural one
        #[arg(long)]
        gamma_sub_fraction: Option<f64>,
        #[arg(long, default_value_t = 1000.0)]
        atoms: f64,
        /// Excitation probability per emitter
        #[arg(long, default_value_t = 0.01)]
        p: f64,
        /// Integration time in seconds
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        contrast: f64,
        /// Also write a CSV and manifest here
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
