use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = arbor_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match arbor_cli::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
