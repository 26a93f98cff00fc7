//! Library side of the `srb` binary, kept separate so tests can drive the
//! commands without spawning processes.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use srb_core::Error;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "srb", about = "Train, decode and score semantic-relevance seq2seq models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints, vocabulary and loss log.
    Train(RunArgs),
    /// Decode a test file and score it against the references.
    Eval(RunArgs),
    /// Decode one source per input line.
    Generate(RunArgs),
    /// Compare analytic and numeric gradients on a miniature model.
    Gradcheck(RunArgs),
    /// Write a synthetic copy/reverse/truncate/synonym corpus.
    MakeToy(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `key = value` configuration file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// `--key=value` overrides, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    pub overrides: Vec<String>,
}

impl RunArgs {
    /// The config file and the remaining overrides. `-c`/`--config` is also
    /// accepted after the first override, where clap leaves it unparsed.
    pub fn resolve(&self) -> Result<(Option<PathBuf>, Vec<String>), Error> {
        let mut config = self.config.clone();
        let mut rest = Vec::new();
        let mut it = self.overrides.iter();
        while let Some(arg) = it.next() {
            if arg == "-c" || arg == "--config" {
                let path = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("{arg} needs a file")))?;
                config = Some(PathBuf::from(path));
            } else if let Some(path) = arg.strip_prefix("--config=") {
                config = Some(PathBuf::from(path));
            } else {
                rest.push(arg.clone());
            }
        }
        Ok((config, rest))
    }
}

impl Command {
    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Train(a) | Command::Eval(a) | Command::Generate(a) | Command::Gradcheck(a) | Command::MakeToy(a) => a,
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::NumericFailure { .. } | Error::NonFinite(_) | Error::DegenerateVector(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Runs a parsed command, printing results to stdout. Returns the exit code.
pub fn run(cli: &Cli) -> Result<i32, Error> {
    let (file, overrides) = cli.command.args().resolve()?;
    let cfg = RunConfig::load(file.as_deref(), &overrides)?;
    match &cli.command {
        Command::Train(_) => {
            let s = commands::cmd_train(&cfg)?;
            println!(
                "trained {} epochs{}; best checkpoint {}",
                s.outcome.epochs.len(),
                if s.outcome.stopped_early { " (early stop)" } else { "" },
                s.best_checkpoint.display()
            );
        }
        Command::Eval(_) => {
            let report = commands::cmd_eval(&cfg)?;
            print!("{}", report.table());
        }
        Command::Generate(_) => {
            let n = commands::cmd_generate(&cfg)?;
            println!("decoded {n} lines");
        }
        Command::Gradcheck(_) => {
            let s = commands::cmd_gradcheck(&cfg)?;
            for (group, err) in &s.groups {
                println!("{group:<12} {err:.3e}");
            }
            println!(
                "lambda={} max relative error {:.3e} over {} entries: {}",
                s.lambda,
                s.report.max_rel_error,
                s.report.elements,
                if s.passed() { "PASS" } else { "FAIL" }
            );
            if !s.passed() {
                return Ok(EXIT_NUMERIC);
            }
        }
        Command::MakeToy(_) => {
            let path = commands::cmd_make_toy(&cfg)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(EXIT_OK)
}
