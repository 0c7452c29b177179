//! `electosim` command line: synthesize personas, run a pipeline over a
//! chat backend, and score the results.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a configuration
//! or input validation failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use electosim_core::PipelineVersion;

use crate::commands::evaluate::EvaluateArgs;
use crate::commands::summarize::SummarizeArgs;
use crate::config::{BackendKind, Loaded, Overrides};
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "electosim", about = "Simulate voting decisions with chat-model personas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (YAML or JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated subset of the configured states.
    #[arg(long, value_delimiter = ',')]
    pub states: Option<Vec<String>>,
    /// Pipeline version: v1, v2 or v3.
    #[arg(long)]
    pub version: Option<PipelineVersion>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { states: self.states.clone(), version: self.version, backend: self.backend, seed: self.seed }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write per-state persona files from block aggregates.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Sample personas, run the pipeline and tally votes per state.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint of an interrupted run.
        #[arg(long)]
        resume: bool,
    },
    /// Score simulated shares against actual results.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate` (default: the output directory).
        #[arg(long)]
        results: Option<PathBuf>,
        /// Actual results file (default: the config's `actuals`).
        #[arg(long)]
        actuals: Option<PathBuf>,
    },
    /// Build a context file from neutral summaries of raw agenda and biography text.
    SummarizeContext {
        #[command(flatten)]
        common: Common,
        /// Raw party agenda text
        #[arg(long)]
        agendas: PathBuf,
        /// Raw candidate biography text
        #[arg(long)]
        bios: PathBuf,
        /// Democratic candidate name
        #[arg(long)]
        democrat: String,
        /// Republican candidate name
        #[arg(long)]
        republican: String,
        /// Where to write the context JSON
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Generate { common } => commands::generate::run(&Loaded::load(&common.config, &common.overrides(), true)?),
        Command::Simulate { common, resume } => {
            commands::simulate::run(&Loaded::load(&common.config, &common.overrides(), true)?, resume)
        }
        Command::Evaluate { common, results, actuals } => {
            let cfg = Loaded::load(&common.config, &common.overrides(), true)?;
            commands::evaluate::run(&cfg, &EvaluateArgs { results, actuals })
        }
        Command::SummarizeContext { common, agendas, bios, democrat, republican, out } => {
            let cfg = Loaded::load(&common.config, &common.overrides(), false)?;
            commands::summarize::run(&cfg, &SummarizeArgs { agendas, bios, democrat, republican, out })
        }
    }
}

/// Parses arguments, runs the command and returns the exit code. Output goes
/// to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
