use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use n2n_cli::{commands, exit, Cli};

fn configure_threads() {
    let Ok(value) = std::env::var("N2N_THREADS") else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // Fails only if a pool already exists, which cannot happen this early.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring N2N_THREADS={value:?}; expected a positive integer"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let argv: Vec<String> = std::env::args().collect();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = commands::run(cli.command, &argv, &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
