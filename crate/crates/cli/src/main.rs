use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = stmix_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match stmix_cli::run(&cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stmix: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
