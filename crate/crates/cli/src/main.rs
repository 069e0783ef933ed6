//! `fhsae`: fit, posterior, interval and simulation commands.
//!
//! Results go to stdout (or `--output`) in the chosen format only;
//! diagnostics go to stderr. Exit codes: 0 success, 2 data or usage error,
//! 3 no interior maximum below `a_max`, 4 numerical failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fhsae::sim::QChoice;
use fhsae::FhError;

#[derive(Parser, Debug)]
#[command(name = "fhsae", version, about = "Fay-Herriot small-area estimation toolkit")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    pub format: Format,
    /// Write results to this file instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate A and report β̂, shrinkage factors and EBLUPs.
    Fit(FitArgs),
    /// Exact, ADM and Laplace posteriors of the shrinkage factors.
    Posterior(PosteriorArgs),
    /// Parametric bootstrap intervals for every area.
    Interval(IntervalArgs),
    /// Monte Carlo studies.
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Reml,
    Ml,
    Alm,
    Aml,
    /// General q with `--q` and `--base`.
    Gml,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Base {
    Residual,
    Profile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PriorName {
    /// Flat prior on A.
    Uniform,
    /// A^(-1/2).
    InvSqrt,
    /// A^p with `--exponent p`, -1 < p <= 0.
    Power,
}

/// Shared `--q`/`--base` options for methods named `gml`.
#[derive(Args, Debug, Clone)]
pub struct GmlArgs {
    /// Exponent of the A^q multiplier; requires `--method gml`.
    #[arg(long)]
    pub q: Option<f64>,
    /// Likelihood multiplied by A^q for `--method gml`.
    #[arg(long, value_enum, default_value_t = Base::Residual)]
    pub base: Base,
    /// Upper search bound for A (default 1e4 * max V).
    #[arg(long)]
    pub a_max: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Dataset CSV with header `area,y,v,x1,...,xr`.
    pub input: PathBuf,
    /// Comma-separated estimators.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "reml")]
    pub method: Vec<MethodName>,
    #[command(flatten)]
    pub gml: GmlArgs,
}

#[derive(Args, Debug)]
pub struct PosteriorArgs {
    /// Dataset CSV with header `area,y,v,x1,...,xr`.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = PriorName::Uniform)]
    pub prior: PriorName,
    /// Exponent for `--prior power`.
    #[arg(long, allow_hyphen_values = true)]
    pub exponent: Option<f64>,
    /// Also write per-area density grids (CSV) here.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IntervalArgs {
    /// Dataset CSV with header `area,y,v,x1,...,xr`.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodName::Alm)]
    pub method: MethodName,
    #[command(flatten)]
    pub gml: GmlArgs,
    /// Bootstrap replicates (at least 100).
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Nominal coverage.
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    /// Floor applied to zero estimates of A; 0 disables truncation.
    #[arg(long, default_value_t = 0.0)]
    pub truncation: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum SimulateCommand {
    /// Bias of the estimated shrinkage factor for several q.
    Bias(BiasArgs),
    /// Fraction of zero estimates of A.
    Zerofreq(ZeroArgs),
    /// Coverage and length of bootstrap intervals.
    Coverage(CoverageArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// b in {0.2,0.35,0.5,0.65,0.8}, q in {0,0.5,1,1-b}, k=15, V=1, 10000 reps.
    Figure3,
}

/// Balanced design options shared by the studies.
#[derive(Args, Debug, Clone)]
pub struct DesignArgs {
    /// Number of areas.
    #[arg(long, default_value_t = 15)]
    pub k: usize,
    /// Common sampling variance.
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    /// True shrinkage factor(s), comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub b: Vec<f64>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BiasArgs {
    #[arg(long, value_enum, conflicts_with_all = ["k", "b", "q", "v"])]
    pub preset: Option<Preset>,
    #[command(flatten)]
    pub design: DesignArgs,
    /// q values (numbers or `oracle` for 1-b), comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_q, default_value = "0,0.5,1,oracle")]
    pub q: Vec<QChoice>,
    /// Replicates per design (at least 1000).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_enum, default_value_t = Base::Residual)]
    pub base: Base,
    /// Also write a gnuplot-ready long-format file here.
    #[arg(long)]
    pub long_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ZeroArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// q values (numbers or `oracle` for 1-b), comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_q, default_value = "0")]
    pub q: Vec<QChoice>,
    #[arg(long, default_value_t = 10_000)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = Base::Residual)]
    pub base: Base,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Interval methods to compare, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "alm")]
    pub method: Vec<MethodName>,
    #[command(flatten)]
    pub gml: GmlArgs,
    /// Floor applied to zero estimates of A.
    #[arg(long, default_value_t = 0.0)]
    pub truncation: f64,
    /// Outer replicates (at least 200).
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Bootstrap replicates per outer replicate.
    #[arg(long, default_value_t = 400)]
    pub boot_reps: usize,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
}

fn parse_q(s: &str) -> Result<QChoice, String> {
    if s.eq_ignore_ascii_case("oracle") {
        return Ok(QChoice::Oracle);
    }
    s.parse::<f64>()
        .map(QChoice::Fixed)
        .map_err(|_| format!("`{s}` is neither a number nor `oracle`"))
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: String, source: std::io::Error },
    Model(FhError),
}

impl From<FhError> for CliError {
    fn from(e: FhError) -> Self {
        CliError::Model(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
            CliError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Model(e) => match e {
                FhError::NoInteriorMax { .. } => 3,
                FhError::SingularSystem
                | FhError::QuadratureNotConverged { .. }
                | FhError::AdjustedModeNotInterior
                | FhError::NegativeCurvature(_)
                | FhError::TooManyFailedReplicates { .. } => 4,
                _ => 2,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
