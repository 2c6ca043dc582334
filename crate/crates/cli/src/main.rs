use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = entangle_cli::Cli::parse();
    match entangle_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
