use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use tailcorr::cli::{hint, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    match run(cli, &mut out, &mut err) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let Some(h) = hint(&e) {
                let _ = writeln!(err, "hint: {h}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
