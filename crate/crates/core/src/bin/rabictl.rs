use std::process::ExitCode;

use clap::Parser;
use rabies_core::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            for line in &out.report {
                println!("{line}");
            }
            println!("wrote {}", out.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = serde_json::json!({
                "error": { "kind": e.kind(), "code": e.exit_code(), "message": e.to_string() }
            });
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
