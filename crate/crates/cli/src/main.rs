use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod certify;
mod config;
mod manifest;
mod train;

/// Shakeout regularizer certification, training and weight analysis.
#[derive(Debug, Parser)]
#[command(name = "shakeout", version)]
struct Cli {
    /// TOML file of flag defaults (keys are flag names without dashes).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the GLM regularizer propositions and its Monte-Carlo agreement.
    CertifyGlm(certify::CertifyArgs),
    /// Train one model on MNIST.
    Train(train::TrainArgs),
    /// Weight diagnostics on a checkpoint, or regularizer contours.
    Analyze(analyze::AnalyzeArgs),
}

/// What a successful command found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Violations,
}

pub const EXIT_VIOLATIONS: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<shakeout::Error>() {
            return match e {
                shakeout::Error::Divergence { .. } => EXIT_DIVERGED,
                _ => EXIT_INPUT,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<toml::de::Error>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_INPUT
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config::Defaults::load(cli.config.as_deref()).and_then(|defaults| match cli.command {
        Command::CertifyGlm(args) => certify::run(args, &defaults),
        Command::Train(args) => train::run(args, &defaults),
        Command::Analyze(args) => analyze::run(args, &defaults),
    });
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violations) => ExitCode::from(EXIT_VIOLATIONS),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
