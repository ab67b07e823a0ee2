use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = xufs::cli::Cli::parse();
    match xufs::cli::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("xufs: {e:#}");
            ExitCode::from(xufs::cli::EXIT_FAILURE)
        }
    }
}
