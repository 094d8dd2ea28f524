//! `hire`: train, evaluate and inspect the HIRE rating model.
//!
//! Exit status is 1 for configuration errors, 2 for data errors and 3 when
//! training diverges.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hire_core::Error;

use config::{ConfigError, RunConfig, Settings};

#[derive(Parser)]
#[command(name = "hire", version, about = "Cold-start rating prediction with attention over users, items and attributes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes model.ckpt, trace.csv and config.txt.
    Train,
    /// Score a checkpoint and/or the popularity baseline on test contexts.
    Eval,
    /// Write the attention matrices of one test context.
    DumpAttention,
    /// Write a synthetic dataset in the MovieLens layout.
    Synth {
        #[arg(long, default_value_t = 1500)]
        users: usize,
        #[arg(long, default_value_t = 1200)]
        movies: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. }
                | Error::MissingFile(_)
                | Error::Parse { .. }
                | Error::UnknownColumn(_)
                | Error::Format(_)
                | Error::InvalidGraph(_)
                | Error::EmptyGraph(_) => 2,
                Error::Diverged { .. } | Error::NonFiniteGradient(_) => 3,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.settings)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| ConfigError(format!("cannot start {} workers: {e}", cfg.workers)))?;
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::DumpAttention => commands::dump_attention(&cfg),
        Command::Synth { users, movies } => commands::synth(&cfg.out, users, movies, cfg.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
