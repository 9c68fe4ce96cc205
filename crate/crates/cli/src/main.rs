use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use oneshot_dpd_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(out) => {
            // a closed pipe downstream is not an error of ours
            let _ = writeln!(std::io::stdout().lock(), "{}", out.render(cli.format).trim_end());
            match out.failure {
                Some(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
