use std::process::ExitCode;

use clap::Parser;
use score_tensor::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            for (k, v) in &summary.metrics {
                println!("{k},{v}");
            }
            eprintln!("wrote {}", summary.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
