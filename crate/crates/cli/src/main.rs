//! `survey-mc`: Monte Carlo studies, imputation and item-mean estimation
//! for survey data with item nonresponse.

mod commands;
mod input;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Process exit status for a failed run.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, flags or input files (exit 2).
    Input(String),
    /// Too many Monte Carlo replicates failed (exit 3).
    TooManyFailures(String),
    /// Anything else, e.g. an unwritable output path (exit 1).
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::TooManyFailures(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::TooManyFailures(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<survey_mc::Error> for Failure {
    fn from(e: survey_mc::Error) -> Self {
        match e {
            survey_mc::Error::TooManyFailures { .. } => Failure::TooManyFailures(e.to_string()),
            survey_mc::Error::Io(_) => Failure::Runtime(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "survey-mc", version, about = "Design-weighted matrix completion for survey item nonresponse")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SURVEY_MC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study described by a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill in missing cells by design-weighted matrix completion.
    Impute {
        #[command(flatten)]
        data: DataArgs,
        /// Imputed outcome matrix (observed cells copied verbatim).
        #[arg(long)]
        out: PathBuf,
        /// Also write the fitted signal matrix.
        #[arg(long)]
        a_hat: Option<PathBuf>,
    },
    /// Estimate each item's population mean.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// One of Full, HDI, MI, IPM, DRLR, DRNI, DRMC.
        #[arg(long, default_value = "DRMC")]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// Inverse probability estimator without the design weight.
        #[arg(long)]
        paper_literal: bool,
    },
}

#[derive(Args, Clone, Debug, serde::Serialize)]
pub struct DataArgs {
    /// Outcomes, one column per item; empty or NA marks a missing cell.
    #[arg(long)]
    pub y: PathBuf,
    /// Fully observed covariates.
    #[arg(long)]
    pub x: PathBuf,
    /// Inclusion probabilities, or weights with --weights-are-w.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// The weights file holds w = 1/pi.
    #[arg(long)]
    pub weights_are_w: bool,
    /// Population size; defaults to the sum of the weights.
    #[arg(long)]
    pub population_size: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.01)]
    pub p_clip: f64,
    /// IRLS iteration cap for the response model.
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Tuning grid as TOML (`tau1`, `threshold_fractions`, `alpha`).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Write the cross-validation trace as CSV.
    #[arg(long)]
    pub cv_trace: Option<PathBuf>,
    /// Run manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn configure_threads(threads: Option<usize>) -> Result<(), Failure> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Input(format!("cannot configure {n} threads: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Simulate { config, out } => commands::simulate(&config, &out, cli.threads),
        Command::Impute { data, out, a_hat } => commands::impute(&data, &out, a_hat.as_deref()),
        Command::Estimate { data, method, out, paper_literal } => {
            commands::estimate_cmd(&data, &method, &out, paper_literal)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
