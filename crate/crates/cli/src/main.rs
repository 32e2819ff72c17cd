//! `mfbm3d`: denoise Poisson frame stacks, simulate noisy data, score
//! results and rerun the benchmark grid.
//!
//! Exit codes: 0 success, 1 bad arguments, 2 I/O or missing assets,
//! 3 numerical failure.

mod assets;
mod commands;
mod settings;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<mfbm3d::Error> for CliError {
    fn from(e: mfbm3d::Error) -> Self {
        let code = if e.is_io() {
            2
        } else if e.is_numerical() {
            3
        } else {
            1
        };
        let mut message = e.to_string();
        if let mfbm3d::Error::MissingAsset { .. } = e {
            message.push_str("\nfetch the benchmark images with `mfbm3d fetch-assets` (or import local copies with `mfbm3d fetch-assets --import NAME=PATH`)");
        }
        Self { code, message }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mfbm3d", version, about = "Multi-frame BM3D denoising of Poisson image stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Denoise a stack of registered Poisson frames.
    Denoise(commands::DenoiseArgs),
    /// Draw Poisson frames from a clean image.
    Simulate(commands::SimulateArgs),
    /// PSNR between an estimate and a reference image.
    Evaluate(commands::EvaluateArgs),
    /// Rerun the benchmark grid and print a PSNR table.
    #[command(name = "reproduce-table1")]
    ReproduceTable(commands::ReproduceArgs),
    /// Download or import the clean benchmark images.
    FetchAssets(assets::FetchArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Denoise(a) => commands::denoise(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::ReproduceTable(a) => commands::reproduce(a),
        Command::FetchAssets(a) => assets::fetch(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
