use std::process::ExitCode;

use clap::Parser;

use mspld::cli::{self, Cli};

fn worker_count(cli: &Cli) -> Option<usize> {
    cli.workers.or_else(|| {
        std::env::var("MSPLD_WORKERS").ok().and_then(|v| v.parse().ok())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = worker_count(&cli) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global()
        {
            eprintln!("{}", serde_json::json!({"error": {"kind": "workers", "message": e.to_string()}}));
            return ExitCode::FAILURE;
        }
    }
    match cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": e.kind(), "message": e.to_string()}})
            );
            ExitCode::FAILURE
        }
    }
}
