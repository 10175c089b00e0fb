use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = azem_cli::Cli::parse();
    match azem_cli::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
