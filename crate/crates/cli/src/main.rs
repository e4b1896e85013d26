mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use stiv_core::conic::Tolerances;

use args::{Cli, Command};
use output::{emit, exit_code, Document, RunManifest, SCHEMA};

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Inspect(_) => "inspect",
        Command::Estimate(_) => "estimate",
        Command::Sensitivity(_) => "sensitivity",
        Command::Ci(_) => "ci",
        Command::Select(_) => "select",
        Command::Nv(_) => "nv",
        Command::Simulate(_) => "simulate",
    }
}

fn finish<T: Serialize>(cli: &Cli, result: T, manifest: RunManifest) -> anyhow::Result<()> {
    let doc = Document {
        schema: SCHEMA,
        command: manifest.command.clone(),
        result,
        manifest,
    };
    emit(&doc, cli.out.as_deref())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let name = command_name(&cli.command);
    let mut m = RunManifest::new(name, serde_json::to_value(cli)?);
    let tol = Tolerances::default();
    log::info!("running {name}");
    match &cli.command {
        Command::Inspect(a) => {
            let r = commands::inspect(a, &mut m)?;
            finish(cli, r, m)
        }
        Command::Estimate(a) => {
            let r = commands::estimate(a, &mut m, &tol)?;
            finish(cli, r, m)
        }
        Command::Sensitivity(a) => {
            let r = commands::sensitivity(a, &mut m, &tol)?;
            finish(cli, r, m)
        }
        Command::Ci(a) | Command::Select(a) => {
            let r = commands::ci(a, &mut m, &tol)?;
            finish(cli, r, m)
        }
        Command::Nv(a) => {
            let r = commands::nv(a, &mut m, &tol)?;
            finish(cli, r, m)
        }
        Command::Simulate(a) => {
            let r = commands::simulate(a, &mut m)?;
            // A .csv target gets the flat summary; the JSON document still goes to stdout.
            match cli.out.as_deref() {
                Some(path) if path.extension().is_some_and(|e| e == "csv") => {
                    std::fs::write(path, commands::summary_csv(&r)?)?;
                    let doc = Document {
                        schema: SCHEMA,
                        command: m.command.clone(),
                        result: r,
                        manifest: m,
                    };
                    emit(&doc, None)
                }
                _ => finish(cli, r, m),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STIV_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { output::exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
