//! `gud`: fit bases, train score networks, sample, and evaluate likelihoods.

mod args;
mod commands;
mod inputs;
mod settings;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;
use gud_core::GudError;

/// Exit status 1: invalid configuration, 2: missing or unreadable input,
/// 3: numerical failure.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        CliError { code: 1, message: m.into() }
    }

    pub fn missing(m: impl Into<String>) -> Self {
        CliError { code: 2, message: m.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<GudError> for CliError {
    fn from(e: GudError) -> Self {
        let code = match &e {
            GudError::InvalidInput(_) | GudError::DimensionMismatch { .. } => 1,
            GudError::Format(_) | GudError::Io(_) => 2,
            GudError::Numerical(_) => 3,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::missing(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match args::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gud: {e}");
            ExitCode::from(e.code)
        }
    }
}
