use std::process::ExitCode;

use clap::Parser;
use ergo::cli::{run_profile, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let line = serde_json::json!({
                "error": "config",
                "code": 2,
                "message": e.to_string().lines().next().unwrap_or("").trim_start_matches("error: "),
            });
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    let profile = std::env::var("ERGO_PROFILE").ok();
    match run_profile(&cli, profile.as_deref()) {
        Ok(out) => {
            println!("{}", out.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
