use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

use agentseg_core::config::KEYS;
use agentseg_core::RunConfig;

mod advantage;
mod common;
mod dynamics;
mod metrics;
mod score;
mod simulate;
mod validate;

use common::{Failure, ResultExt};

/// Rollout validation, reward scoring, group advantages, episode simulation
/// and segmentation metrics.
///
/// Every config key can be set in a `key=value` file passed with --config and
/// overridden by a flag of the same name (for example `--alpha 0.3`).
#[derive(Debug, Parser)]
#[command(name = "agentseg", version)]
struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Start from the configuration echoed in a previous JSON artifact.
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "config")]
    config_from: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check rollout files against the turn grammar.
    Validate(validate::Args),
    /// Score rollouts against annotations.
    Score(score::Args),
    /// Group-relative advantages and the clipped objective for rollout groups.
    Advantage(advantage::Args),
    /// Run episodes with a policy against a search backend, then score them.
    Simulate(simulate::Args),
    /// Segmentation metrics between predicted and ground-truth mask directories.
    Metrics(metrics::Args),
    /// Per-step means over chronologically ordered score logs, as CSV.
    Dynamics(dynamics::Args),
    /// Print the effective configuration as key=value lines.
    Config,
}

fn command() -> clap::Command {
    Cli::command().args(KEYS.iter().map(|k| {
        Arg::new(*k)
            .long(*k)
            .value_name("VALUE")
            .allow_negative_numbers(true)
            .global(true)
            .help_heading("Config overrides")
    }))
}

fn effective_config(cli: &Cli, matches: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut cfg = if let Some(path) = &cli.config {
        let text = common::read_text(path)?;
        RunConfig::parse_kv(&text).invalid()?
    } else if let Some(path) = &cli.config_from {
        let artifact = common::read_json(path)?;
        RunConfig::from_artifact(&artifact).invalid()?
    } else {
        RunConfig::default()
    };
    let sub = matches.subcommand().map(|(_, m)| m);
    for key in KEYS {
        let value = sub
            .and_then(|m| m.get_one::<String>(key))
            .or_else(|| matches.get_one::<String>(key));
        if let Some(v) = value {
            cfg.set(key, v).invalid()?;
        }
    }
    cfg.validate().invalid()?;
    Ok(cfg)
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<u8, Failure> {
    let cfg = effective_config(&cli, matches)?;
    match cli.command {
        Command::Validate(a) => validate::run(a, &cfg),
        Command::Score(a) => score::run(a, &cfg),
        Command::Advantage(a) => advantage::run(a, &cfg),
        Command::Simulate(a) => simulate::run(a, &cfg),
        Command::Metrics(a) => metrics::run(a, &cfg),
        Command::Dynamics(a) => dynamics::run(a, &cfg),
        Command::Config => {
            print!("{}", cfg.to_kv());
            Ok(0)
        }
    }
}

/// Prints a clap error; usage errors exit as validation failures.
fn usage_exit(e: clap::Error) -> ExitCode {
    let _ = e.print();
    if e.use_stderr() {
        ExitCode::from(common::EXIT_INVALID)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => return usage_exit(e),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => return usage_exit(e),
    };
    match run(cli, &matches) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
