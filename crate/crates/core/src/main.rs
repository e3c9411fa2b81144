use std::io::Write;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use clap::error::ErrorKind;

use miscomp_impact::cli::{self, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(cli::EXIT_CONFIG as u8),
            };
        }
    };
    match cli::execute(cli) {
        Ok(outcome) => match emit(&outcome.stdout) {
            Ok(()) => ExitCode::from(outcome.code as u8),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(cli::EXIT_INTERNAL as u8)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).context("writing to standard output")?;
    out.flush().context("flushing standard output")
}
