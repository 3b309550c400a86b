mod args;
mod commands;
mod output;
mod settings;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Command};
use output::{CliError, ManifestStub, RunDir};

fn configure_threads(cli: &Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let threads = if common.deterministic { Some(1) } else { common.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::new("config", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new("config", e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = chrono::Local::now();
    let clock = Instant::now();
    let name = cli.command.name();

    let mut run = match RunDir::create(cli.command.common().out.as_deref(), name, &started.format("%Y%m%d-%H%M%S").to_string()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).unwrap_or_else(|_| e.to_string()));
            return ExitCode::FAILURE;
        }
    };

    let result = configure_threads(&cli).and_then(|()| match &cli.command {
        Command::Train(a) => commands::train_cmd(a, &mut run),
        Command::Calibrate(a) => commands::calibrate_cmd(a, &mut run),
        Command::Explain(a) => commands::explain_cmd(a, &mut run),
        Command::ExplainBatch(a) => commands::explain_batch_cmd(a, &mut run),
        Command::Roar(a) => commands::roar_cmd(a, &mut run),
    });

    let dir = run.path().to_path_buf();
    let stub = ManifestStub {
        command: name.to_owned(),
        argv: std::env::args().collect(),
        started_at: started.to_rfc3339(),
        wall_seconds: clock.elapsed().as_secs_f64(),
    };
    let error = result.err();
    if let Err(e) = run.finish(stub, error.as_ref()) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match error {
        None => {
            println!("outputs in {}", dir.display());
            ExitCode::SUCCESS
        }
        Some(e) => {
            eprintln!("error: {e}");
            eprintln!("details in {}", dir.join("error.json").display());
            ExitCode::FAILURE
        }
    }
}
