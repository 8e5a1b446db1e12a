use std::process::ExitCode;

use clap::Parser;
use tracereg::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            eprintln!("wrote {} and {}", out.report.display(), out.table.display());
            if !out.clean {
                eprintln!("warning: some fits did not reach the optimality tolerance");
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
