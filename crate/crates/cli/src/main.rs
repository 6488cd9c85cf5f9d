//! `metastable`: command-line driver for the exit-statistics and hierarchy toolkit.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 flagged estimates
//! (asymptotic regime not reached), 4 internal or numerical failure.

mod commands;
mod error;
mod report;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metastable_core::integrate::Side;
use metastable_core::semimarkov::Holding;

use crate::error::CliError;
use crate::report::{emit_report, timestamp, Format, Invocation};

#[derive(Debug, Parser)]
#[command(name = "metastable", version, about = "Exit statistics near repelling surfaces and metastable hierarchies")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Global seed; every stochastic result is a function of this value.
    #[arg(long, global = true, env = "METASTABLE_SEED", default_value_t = 42)]
    seed: u64,

    /// Output directory. Without it the JSON summary goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<Format>,

    /// Worker threads for Monte Carlo subcommands. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Characteristic exponent and surface eigenfunctions of a model.
    Gamma(GammaArgs),
    /// Layer-to-layer transition probabilities.
    Transition(TransitionArgs),
    /// Probability of reaching the surface from a thin layer, and its power law.
    SurfaceHit(SurfaceHitArgs),
    /// Occupation density near a surface for the unperturbed process.
    Density(DensityArgs),
    /// Exit-time moments and exponential-law distance from a domain.
    ExitStats(ExitStatsArgs),
    /// Side split and decision time for paths started on a surface.
    ExitSplit(ExitSplitArgs),
    /// Exit splits, holding times and fitted edge exponents of a multi-surface model.
    FitConstants(FitConstantsArgs),
    /// Renewal game limits.
    Game(GameArgs),
    /// Scale ladders and metastable profiles of a domain tree.
    Hierarchy(HierarchyArgs),
    /// Skeleton simulation compared against the hierarchy profiles.
    Semimarkov(SemimarkovArgs),
    /// Built-in self-check suite.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Plus,
    Minus,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Side {
        match s {
            SideArg::Plus => Side::Plus,
            SideArg::Minus => Side::Minus,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model file (`one_d` or `normal_form_2d`).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the surface grid size of a 2-D model.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GammaArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TransitionArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub surface: usize,
    #[arg(long, value_enum, default_value = "plus")]
    pub side: SideArg,
    /// Starting layers (repeatable or comma-separated).
    #[arg(long, required = true, value_delimiter = ',')]
    pub zeta: Vec<f64>,
    #[arg(long)]
    pub kappa1: f64,
    #[arg(long)]
    pub kappa2: f64,
    /// Run the perturbed process at this ε (the surface becomes absorbing).
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.01)]
    pub theta: f64,
    /// Slack of the reported bracket.
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Also fit γ to the estimates by maximum likelihood.
    #[arg(long)]
    pub fit_gamma: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SurfaceHitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub surface: usize,
    #[arg(long, value_enum, default_value = "plus")]
    pub side: SideArg,
    #[arg(long, required = true, value_delimiter = ',')]
    pub zeta: Vec<f64>,
    #[arg(long)]
    pub kappa: f64,
    /// Several values give an ε sweep at a single ζ; otherwise the model's ε is used.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 20_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub surface: usize,
    #[arg(long, value_enum, default_value = "plus")]
    pub side: SideArg,
    #[arg(long)]
    pub z_lo: f64,
    #[arg(long)]
    pub kappa: f64,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Total post-burn-in time, split across chains.
    #[arg(long)]
    pub t_total: f64,
    /// Burn-in per chain; defaults to 10 mean excursion times.
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 16)]
    pub surface_bins: usize,
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UntilArg {
    /// Stop at the first adjacent surface.
    Surfaces,
    /// Stop on entering the compact of a neighbouring domain.
    Compacts,
}

#[derive(Debug, Clone, Args)]
pub struct ExitStatsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Start domain index; paths start at its center.
    #[arg(long, default_value_t = 0)]
    pub start_domain: usize,
    #[arg(long, value_enum, default_value = "surfaces")]
    pub until: UntilArg,
    /// Compact size for `--until compacts`.
    #[arg(long, default_value_t = 0.1)]
    pub kappa0: f64,
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 2_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
    /// Per-path time budget; exceeding it counts as a timeout.
    #[arg(long)]
    pub budget: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExitSplitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub surface: usize,
    #[arg(long, default_value_t = 0.1)]
    pub kappa0: f64,
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FitConstantsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 2_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 20_000)]
    pub rho_paths: usize,
    #[arg(long, default_value_t = 0.1)]
    pub kappa: f64,
    #[arg(long, default_value_t = 20.0)]
    pub zeta_over_eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GameArgs {
    /// Game family file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the family's ε list.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    /// Replications per ε.
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
}

#[derive(Debug, Clone, Args)]
pub struct HierarchyArgs {
    #[arg(long)]
    pub tree: PathBuf,
    /// Start domain id; all domains when absent.
    #[arg(long)]
    pub start: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HoldingArg {
    Exponential,
    Deterministic,
}

impl From<HoldingArg> for Holding {
    fn from(h: HoldingArg) -> Holding {
        match h {
            HoldingArg::Exponential => Holding::Exponential,
            HoldingArg::Deterministic => Holding::Deterministic,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SemimarkovArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long)]
    pub start: Option<String>,
    /// Time exponents τ (t = ε^τ) as decimals; defaults to one point inside every window.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub tau: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, value_enum, default_value = "exponential")]
    pub holding: HoldingArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Suite {
    Quick,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long, value_enum, default_value = "quick")]
    pub suite: Suite,
}

fn run(cli: &Cli, inv: &Invocation) -> Result<bool, CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("worker pool: {e}")))?;
    }
    let seed = cli.seed;
    let report = match &cli.command {
        Command::Gamma(a) => commands::gamma(a)?,
        Command::Transition(a) => commands::transition(a, seed)?,
        Command::SurfaceHit(a) => commands::surface_hit(a, seed)?,
        Command::Density(a) => commands::density(a, seed)?,
        Command::ExitStats(a) => commands::exit_stats(a, seed)?,
        Command::ExitSplit(a) => commands::exit_split(a, seed)?,
        Command::FitConstants(a) => commands::fit_constants(a, seed)?,
        Command::Game(a) => commands::game(a, seed)?,
        Command::Hierarchy(a) => commands::hierarchy(a)?,
        Command::Semimarkov(a) => commands::semimarkov(a, seed)?,
        Command::Validate(a) => validate::run(a.suite, seed)?,
    };
    emit_report(&report, cli.out.as_deref(), &cli.format, inv)?;
    Ok(report.flagged)
}

fn main() -> ExitCode {
    let started = timestamp();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let inv = Invocation { argv, seed: cli.seed, started };
    match run(&cli, &inv) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("metastable: some estimates are flagged (asymptotic regime not reached); see the summary");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("metastable: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
