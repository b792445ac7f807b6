mod cli;
mod commands;
mod config;
mod tracks;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use cli::{Cli, Command};
use commands::Ctx;

#[derive(Debug)]
pub enum CliError {
    /// missing or malformed inputs, exit status 2
    Input(String),
    /// training or integration blew up, exit status 3
    Numeric(String),
}

impl From<eqflow::Error> for CliError {
    fn from(e: eqflow::Error) -> Self {
        if e.is_numerical() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn primary_output(cmd: &Command) -> &std::path::Path {
    match cmd {
        Command::GenData(a) => &a.out,
        Command::TrainScore(a) => &a.out,
        Command::TrainFlow(a) => &a.out,
        Command::Recover(a) => &a.out,
        Command::Rollout(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::Alife(a) => &a.out,
    }
}

fn run() -> Result<(), CliError> {
    let args = config::merge_config(std::env::args_os().collect())?;
    let matches = Cli::command().try_get_matches_from(args).unwrap_or_else(|e| e.exit());
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let manifest = config::manifest(&Cli::command(), name, sub);
    let ctx = Ctx { seed: cli.seed, jobs: cli.jobs.max(1) };
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a, &ctx)?,
        Command::TrainScore(a) => commands::train_score(a, &ctx)?,
        Command::TrainFlow(a) => commands::train_flow_cmd(a, &ctx)?,
        Command::Recover(a) => commands::recover(a, &ctx)?,
        Command::Rollout(a) => commands::rollout(a, &ctx)?,
        Command::Eval(a) => commands::eval(a, &ctx)?,
        Command::Alife(a) => commands::alife(a, &ctx)?,
    }
    let out = primary_output(&cli.command);
    eqflow::io::write_atomic(&config::sidecar(out, ".manifest.txt"), manifest.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Input(m) => eprintln!("error: {m}"),
                CliError::Numeric(m) => eprintln!("numerical failure: {m}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
