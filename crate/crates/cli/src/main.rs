use std::panic;
use std::process::ExitCode;

use clap::Parser;
use dsattr_cli::{run, Cli, EXIT_INTERNAL, EXIT_OK};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::from(EXIT_OK),
        Ok(Err(failure)) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
