use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = mkedg_cli::Cli::parse();
    let stdout = std::io::stdout();
    match mkedg_cli::run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", mkedg_cli::error_line(&e));
            ExitCode::from(1)
        }
    }
}
