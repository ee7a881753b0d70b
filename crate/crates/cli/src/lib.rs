//! Experiment runner: lemma verification, likelihood scan, Monte-Carlo
//! study, filtering and simulation, with CSV tables and JSON reports.

// Negated comparisons reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod filter_run;
pub mod lemma;
pub mod monte_carlo;
pub mod report;
pub mod scan;
pub mod simulate;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{EngineChoice, ExperimentConfig, Overrides};
use report::Outcome;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] udkf::Error),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Parser)]
#[command(name = "udkf", version, about = "UD sensitivity filter experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte-Carlo replications.
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Comma-separated conditioning parameters, e.g. 1e-2,1e-6.
    #[arg(long = "delta", global = true, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    #[arg(long, global = true, value_enum)]
    pub engine: Option<EngineChoice>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte-Carlo at 250 replications.
    #[arg(long, global = true)]
    pub full_scale: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Step-by-step derivative calculation for the static example.
    VerifyLemma,
    /// −L and −∇L of the INS model over a bandwidth grid.
    Scan,
    /// Repeated estimation on the ill-conditioned family.
    MonteCarlo,
    /// Filters a measurement file and writes estimates and sensitivities.
    FilterRun {
        /// Measurement CSV with its JSON sidecar beside it.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Comma-separated parameter values; defaults to the sidecar's.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Option<Vec<f64>>,
    },
    /// Simulates a model and writes the measurement file.
    Simulate {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Option<Vec<f64>>,
    },
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        let g = &self.global;
        let mut o = Overrides {
            seed: g.seed,
            replications: g.replications,
            deltas: g.deltas.clone(),
            engine: g.engine,
            out: g.out.clone(),
            full_scale: g.full_scale,
            ..Overrides::default()
        };
        match &self.command {
            Command::FilterRun { input, theta } => {
                o.input = input.clone();
                o.theta = theta.clone();
            }
            Command::Simulate { theta } => o.theta = theta.clone(),
            _ => {}
        }
        o
    }
}

pub fn execute(command: &Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match command {
        Command::VerifyLemma => lemma::run(cfg),
        Command::Scan => scan::run(cfg),
        Command::MonteCarlo => monte_carlo::run(cfg),
        Command::FilterRun { .. } => filter_run::run(cfg),
        Command::Simulate { .. } => simulate::run(cfg),
    }
}

/// Parses, runs and reports; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let cfg = match ExperimentConfig::resolve(cli.global.config.as_deref(), &cli.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    match execute(&cli.command, &cfg) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{}", c.line());
            }
            if outcome.passed() {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
