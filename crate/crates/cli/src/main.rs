use std::process::ExitCode;

use clap::Parser;
use linmil_core::Error;

mod args;
mod commands;

use args::{Cli, Command, Prepare};

fn run(cli: Cli) -> Result<(), Error> {
    let jobs = cli.jobs.unwrap_or_else(commands::default_jobs).max(1);
    // Only fails if a global pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global();
    match &cli.command {
        Command::Prepare(Prepare::Synth(a)) => commands::prepare_synth(a),
        Command::Prepare(Prepare::Musk(a)) => commands::prepare_musk(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Select(a) => commands::select(a, false),
        Command::Heatmap(a) => commands::select(a, true),
        Command::Ablate(a) => commands::ablate(a, jobs),
        Command::Flops(a) => commands::flops(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
