//! Command-line front end: simulate, forecast, backtest, repro-tables, tau.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod io;

use config::{Cadence, List, Switch};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<calsel::Error> for CliError {
    fn from(e: calsel::Error) -> Self {
        use calsel::Error as E;
        match e.root() {
            E::Domain(_) | E::Unsupported(_) => CliError::Usage(e.to_string()),
            E::InsufficientData { .. } | E::Alignment(_) | E::InsufficientExceedances { .. } => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "calsel", version, about = "Conditional VaR and ES via CALS and empirical likelihood")]
pub struct Cli {
    /// Plain key=value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a linear GARCH path with its true conditional risks.
    Simulate(SimulateArgs),
    /// Rolling one-step VaR/ES forecasts over a return series.
    Forecast(ForecastArgs),
    /// Kupiec, DQ and ES bootstrap tests on a forecast file.
    Backtest(BacktestArgs),
    /// Monte Carlo Bias/RMSE tables.
    ReproTables(ReproArgs),
    /// Expectile level by empirical likelihood next to the grid-search level.
    Tau(TauArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Coefficient preset 1, 2 or 3.
    #[arg(long)]
    pub case: Option<u8>,
    /// Custom intercept (needs --beta and --gamma too).
    #[arg(long)]
    pub beta0: Option<f64>,
    /// Custom volatility lag coefficients, comma separated.
    #[arg(long)]
    pub beta: Option<List<f64>>,
    /// Custom absolute-return lag coefficients, comma separated.
    #[arg(long)]
    pub gamma: Option<List<f64>>,
    /// normal, tN (unit-variance Student-t).
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Level for the ground-truth VaR/ES columns.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Return column name.
    #[arg(long)]
    pub col: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Sieve truncation lag.
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of expectile levels k/(K+1).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// lower or upper; inferred from alpha when omitted.
    #[arg(long)]
    pub tail: Option<calsel::Tail>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    /// Dates between volatility refits, or `once`.
    #[arg(long)]
    pub refit_every: Option<Cadence>,
    /// refined or preliminary volatility for the residuals.
    #[arg(long)]
    pub residuals: Option<String>,
    /// Fall back to the grid-search level when EL fails (on/off).
    #[arg(long)]
    pub el_fallback: Option<Switch>,
    #[arg(long)]
    pub min_el_n: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Add plug-in standard errors (on/off).
    #[arg(long, num_args = 0..=1, default_missing_value = "on")]
    pub stderr: Option<Switch>,
    /// Forecast CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary; defaults to the forecast path with a .json extension.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Optional two-column CSV of the tau series.
    #[arg(long)]
    pub tau_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// Forecast CSV written by `forecast`.
    #[arg(long)]
    pub forecasts: Option<PathBuf>,
    /// Realized returns; checked against the forecast file's `realized` column.
    #[arg(long)]
    pub returns: Option<PathBuf>,
    #[arg(long)]
    pub col: Option<String>,
    /// hat or tilde forecasts.
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tail: Option<calsel::Tail>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Standardize ES excesses by the volatility forecast (on/off).
    #[arg(long)]
    pub standardize: Option<Switch>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated cases.
    #[arg(long)]
    pub case: Option<List<u8>>,
    /// Comma-separated innovation laws.
    #[arg(long)]
    pub dist: Option<List<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_in: Option<usize>,
    #[arg(long)]
    pub n_out: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub refit_every: Option<Cadence>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Table CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TauArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub col: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Squared-error comparison over simulated i.i.d. samples.
    #[arg(long)]
    pub compare: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut r = config::Resolver::new(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a, &mut r),
        Command::Forecast(a) => commands::forecast(a, &mut r),
        Command::Backtest(a) => commands::backtest(a, &mut r),
        Command::ReproTables(a) => commands::repro_tables(a, &mut r),
        Command::Tau(a) => commands::tau(a, &mut r),
    }
}
