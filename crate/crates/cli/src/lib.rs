//! Command-line driver: synthesize data, train stage models, evaluate
//! ensembles, sweep confidence thresholds and write reports.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "camtrap", version, about = "Two-stage camera-trap labeling pipeline")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic manifest.
    Synth,
    /// Train the configured stage (and ensemble members).
    Train,
    /// Evaluate checkpoints on the held-out split.
    Eval,
    /// Sweep confidence thresholds and estimate automation.
    Sweep,
    /// Summarize the run directory as Markdown.
    Report,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] camtrap_core::Error),
}

impl CliError {
    /// 1 usage/config, 2 data/IO, 3 numeric/training.
    pub fn exit_code(&self) -> i32 {
        use camtrap_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => match e {
                E::Config { .. } => 1,
                E::Numeric(_) | E::Diverged { .. } | E::Unattainable { .. } => 3,
                _ => 2,
            },
        }
    }
}

/// Parses `args` and runs the command with the given environment.
pub fn run_with_env<I, T>(args: I, env: Vec<(String, String)>) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(&cli, env)
}

pub fn run(cli: &Cli, env: Vec<(String, String)>) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), env, cli.seed)?;
    let ctx = commands::Ctx {
        cfg,
        out: cli.out.clone(),
    };
    match cli.command {
        Command::Synth => commands::synth::run(&ctx).map(|_| ()),
        Command::Train => commands::train::run(&ctx).map(|_| ()),
        Command::Eval => commands::eval::run(&ctx).map(|_| ()),
        Command::Sweep => commands::sweep::run(&ctx).map(|_| ()),
        Command::Report => commands::report::run(&ctx).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(
            CliError::Core(camtrap_core::Error::Integrity("x".into())).exit_code(),
            2
        );
        assert_eq!(
            CliError::Core(camtrap_core::Error::Diverged { epoch: 1, batch: 0 }).exit_code(),
            3
        );
    }

    #[test]
    fn bad_flag_is_usage_error() {
        let e = run_with_env(["camtrap", "synth", "--bogus"], Vec::new()).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }
}
