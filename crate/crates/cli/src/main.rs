//! `gomix`: fit, compare and check Grade-of-Membership models from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical abort or failed check.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gomix_core::GomError;
use thiserror::Error;

use commands::{CheckArgs, Context, DiagnoseArgs, FitArgs, GenerateArgs, SelectArgs};
use config::{Common, ConfigFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] GomError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Check(_) => 3,
            CliError::Core(e) if e.is_data() => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "gomix", version, about = "Grade-of-Membership models for multivariate binary data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a preset design.
    Generate(GenerateArgs),
    /// Fit one model by MCMC, variational EM or the extended MCMC mixture.
    Fit(FitArgs),
    /// Fit a range of K and compare them by chi-square, BIC, DIC and AICM.
    Select(SelectArgs),
    /// Convergence diagnostics from stored traces.
    Diagnose(DiagnoseArgs),
    /// Check the latent class representation on random models.
    CheckRepresentation(CheckArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = ConfigFile::load(cli.common.config.as_deref())?;
    let common = file.common(&cli.common)?;
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    let ctx = Context { seed: common.seed, out_dir: common.out_dir.unwrap_or_else(|| PathBuf::from(".")) };
    std::fs::create_dir_all(&ctx.out_dir)?;
    match &cli.command {
        Command::Generate(a) => commands::generate(&ctx, &file.section("generate", a)?),
        Command::Fit(a) => commands::fit(&ctx, &file.section("fit", a)?),
        Command::Select(a) => commands::select(&ctx, &file.section("select", a)?),
        Command::Diagnose(a) => commands::diagnose_traces(&ctx, &file.section("diagnose", a)?),
        Command::CheckRepresentation(a) => commands::check(&ctx, &file.section("check-representation", a)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
