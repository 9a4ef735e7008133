use std::process::ExitCode;

use clap::Parser;
use coopdiff::cli::commands::{exit_code, run, Command};

/// Diffusion sampling, time-decoupled generators and cooperative fusion.
#[derive(Parser)]
#[command(name = "coopdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(m) => {
            for a in &m.artifacts {
                eprintln!("wrote {a}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
