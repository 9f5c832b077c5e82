use std::process::ExitCode;

use clap::Parser;
use magr_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Library errors already render their cause; others carry context chains.
            if err.is::<magr_core::Error>() {
                eprintln!("error: {err}");
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
