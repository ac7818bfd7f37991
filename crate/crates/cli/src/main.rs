use std::process::ExitCode;

use clap::Parser;
use depthtrack_cli::{run, Cli, ConfigError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(manifest) => {
            for (code, n) in &manifest.error_tallies {
                eprintln!("{code}: {n} frame(s)");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
