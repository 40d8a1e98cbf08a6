use std::process::ExitCode;

use clap::Parser;
use t4pdm_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {
            let _ = std::fs::remove_file(cli.out.join("error.json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let report = serde_json::json!({
                "command": cli.command.name(),
                "error": format!("{e:#}"),
            });
            if std::fs::create_dir_all(&cli.out).is_ok() {
                let _ = std::fs::write(cli.out.join("error.json"), report.to_string() + "\n");
            }
            ExitCode::FAILURE
        }
    }
}
