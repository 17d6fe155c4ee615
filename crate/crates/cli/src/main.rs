mod config;
mod error;
mod experiments;
mod output;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Composite GP experiment runner.
#[derive(Parser)]
#[command(name = "cgpkit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: learn-fusion, timeseries, grf, excess-mse, info-gap or csv-predict.
    Run {
        name: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment once per value of the config's single list-valued field.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("CGPKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config("", format!("CGPKIT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config("", format!("cannot size the thread pool: {e}")))
}

fn base_dir(config: &Path) -> &Path {
    config.parent().unwrap_or(Path::new("."))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Run { name, config, out, seed } => {
            experiments::check_name(&name)?;
            let mut value = config::load(&config)?;
            if let Some(s) = seed {
                match value.as_object_mut() {
                    Some(m) => {
                        m.insert("seed".into(), Value::from(s));
                    }
                    None => return Err(CliError::config("", "config must be a JSON object")),
                }
            }
            let summary = experiments::run(&name, &value, base_dir(&config), &out)?;
            println!("{name} {} -> {}", summary.config_hash, out.display());
            for r in summary.rows {
                match r.rmse {
                    Some(e) => println!("  {:<14} rmse {e:.6}  {:.4}s", r.method, r.seconds),
                    None => println!("  {:<14} {:.4}s", r.method, r.seconds),
                }
            }
        }
        Command::Sweep { config, out } => {
            let value = config::load(&config)?;
            let rows = sweep::run(&value, base_dir(&config), &out)?;
            println!("sweep -> {}", out.join("sweep.csv").display());
            for (v, r) in rows {
                match r.rmse {
                    Some(e) => println!("  {v:<10} {:<14} rmse {e:.6}  {:.4}s", r.method, r.seconds),
                    None => println!("  {v:<10} {:<14} {:.4}s", r.method, r.seconds),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
