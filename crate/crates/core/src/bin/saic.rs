use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use saic::config::{BackendKind, RunConfig};
use saic::pipeline;
use saic::{Error, Result};

#[derive(Parser)]
#[command(
    name = "saic",
    version,
    about = "Style-aligned cell composition for detection datasets"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "saic.toml")]
    config: PathBuf,
    /// Override backend.kind.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the cell bank and compute its embeddings.
    BuildBank,
    /// Choose composition sites and write plan.json.
    Plan,
    /// Compose, filter and emit the augmented dataset.
    Augment,
    /// Re-judge the pairs of an existing run.
    Filter,
    /// Compute metrics and write report.json.
    Eval,
    /// Print a summary of an evaluated run.
    Report,
    /// Run protocol conformance checks against the live backend.
    CheckBackend,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(kind) = cli.backend {
        cfg.backend.kind = kind;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = Some(w);
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = Some(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match cli.command {
        Command::BuildBank => print_json(&pipeline::cmd_build_bank(&cfg, &cfg.backends())?),
        Command::Plan => {
            let plan = pipeline::cmd_plan(&cfg)?;
            println!("{} entries planned", plan.entries.len());
        }
        Command::Augment => print_json(&pipeline::cmd_augment(&cfg, &cfg.backends())?),
        Command::Filter => print_json(&pipeline::cmd_filter(&cfg, &cfg.backends())?),
        Command::Eval => print_json(&pipeline::cmd_eval(&cfg, &cfg.backends())?),
        Command::Report => print!("{}", pipeline::cmd_report(&cfg)?),
        Command::CheckBackend => {
            let results = pipeline::cmd_check_backend(&cfg)?;
            let mut failed = 0;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::BackendUnavailable(format!("{failed} conformance checks failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
