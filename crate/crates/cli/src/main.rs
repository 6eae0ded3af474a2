//! Batch front end: `neckspec <command> --config <file> [--out <dir>]`.
//!
//! Exit codes: 0 PASS, 1 FAIL, 2 bad config.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use config::{Config, ConfigError};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Roots,
    Q0check,
    Paircheck,
    Glue,
    Density,
}

#[derive(Debug, Parser)]
#[command(name = "neckspec", version, about = "Neck-stretching numerics from a JSON experiment config")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn is_config_error(err: &anyhow::Error) -> bool {
    if err.downcast_ref::<ConfigError>().is_some() {
        return true;
    }
    matches!(
        err.downcast_ref::<neckspec::Error>(),
        Some(
            neckspec::Error::Parse { .. }
                | neckspec::Error::InvalidArgument(_)
                | neckspec::Error::Matching(_)
                | neckspec::Error::Unsupported(_)
        )
    )
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NECKSPEC_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("NECKSPEC_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

/// Timestamps live here and nowhere else, so the CSVs stay byte-identical.
fn write_log(out: &Path, cmd: Command, config: &Path, summary: &str) -> Result<()> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let text = format!("unix_time={secs}\ncommand={cmd:?}\nconfig={}\n{summary}\n", config.display());
    neckspec::output::write_bytes_atomic(out.join("run.log"), text.as_bytes())?;
    Ok(())
}

fn run(args: &Args) -> Result<bool> {
    let cfg = Config::load(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.out.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    init_threads()?;
    let outcome = match args.command {
        Command::Roots => commands::roots(&cfg, &out),
        Command::Q0check => commands::q0check(&cfg, &out),
        Command::Paircheck => commands::paircheck(&cfg, &out),
        Command::Glue => commands::glue(&cfg, &out),
        Command::Density => commands::density(&cfg, &out),
    }?;
    let line = format!("{} {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.summary);
    println!("{line}");
    write_log(&out, args.command, &args.config, &line)?;
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                println!("FAIL {err}");
                ExitCode::from(1)
            }
        }
    }
}
