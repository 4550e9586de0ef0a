//! `swintempo`: synth, preprocess, train, infer, evaluate, and crossval
//! subcommands over the detection pipeline. Exit codes: 0 success, 1 bad
//! usage or validation, 2 I/O.

mod commands;
mod config;
mod data;
mod opts;
mod overlay;

use clap::Parser;
use swintempo_core::error::{CoreError, Result};

use crate::opts::{Cli, Command};

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; those are not failures.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e @ CoreError::Io { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = config::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed);
    match cli.command {
        Command::Synth(o) => commands::synth::run(o, file.synth.unwrap_or_default(), seed),
        Command::Preprocess(o) => {
            commands::preprocess::run(o, file.preprocess.unwrap_or_default(), seed)
        }
        Command::Train(o) => commands::train::run(o, file.train.unwrap_or_default(), seed),
        Command::Infer(o) => commands::infer::run(o, file.infer.unwrap_or_default(), seed),
        Command::Evaluate(o) => {
            commands::evaluate::run(o, file.evaluate.unwrap_or_default(), seed)
        }
        Command::Crossval(o) => {
            commands::crossval::run(o, file.crossval.unwrap_or_default(), seed)
        }
    }
}
