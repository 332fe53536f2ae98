//! `mesofolio` batch interface.
//!
//! Exit codes: 0 on success, 1 when some strategies or grid cells failed
//! (listed under `failures`), 2 on a fatal error (see `error.json`).

mod commands;
mod config;
mod output;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mesofolio::market_data::CsvLayout;
use serde_json::json;

use crate::commands::Outcome;
use crate::config::{OutputFormat, RunConfig};
use crate::output::OutDir;

#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }
}

impl From<mesofolio::Error> for CliError {
    fn from(e: mesofolio::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LayoutArg {
    Wide,
    Long,
}

#[derive(Debug, Parser)]
#[command(
    name = "mesofolio",
    version,
    about = "Correlation filtering, community detection and portfolio backtests"
)]
struct Cli {
    /// TOML run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "MESOFOLIO_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Price file layout, for reading and for `synth` output.
    #[arg(long, global = true, value_enum)]
    layout: Option<LayoutArg>,
    /// Worker threads for the backtest grid.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Price file, overriding `[input].path`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Split the correlation matrix into random, mesoscopic and market parts.
    Filter,
    /// Detect communities in the mesoscopic correlation.
    Communities,
    /// Portfolio weights for each configured strategy.
    Optimize,
    /// In-sample / out-of-sample reliability grid.
    Backtest,
    /// Write a synthetic block-structured price panel.
    Synth,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Filter => "filter",
            Command::Communities => "communities",
            Command::Optimize => "optimize",
            Command::Backtest => "backtest",
            Command::Synth => "synth",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config =
        RunConfig::load(cli.config.as_deref()).map_err(|m| CliError::new("invalid_config", m))?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.out = o.clone();
    }
    if let Some(f) = cli.format {
        config.format = f;
    }
    if let Some(l) = cli.layout {
        config.input.layout = match l {
            LayoutArg::Wide => CsvLayout::Wide,
            LayoutArg::Long => CsvLayout::Long,
        };
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(i) = &cli.input {
        config.input.path = Some(i.clone());
    }
    Ok(config)
}

fn run(cli: &Cli, config: &RunConfig) -> Result<Outcome, CliError> {
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .map_err(|e| CliError::new("invalid_argument", e.to_string()))?;
    }
    let out = OutDir::create(config)?;
    match cli.command {
        Command::Filter => commands::filter(config, &out),
        Command::Communities => commands::communities(config, &out),
        Command::Optimize => commands::optimize(config, &out),
        Command::Backtest => commands::backtest(config, &out),
        Command::Synth => commands::synth(config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr)
        .init();

    let command = cli.command.name();
    let config = resolve(&cli);
    let out_dir = config
        .as_ref()
        .map(|c| c.out.clone())
        .unwrap_or_else(|_| cli.out.clone().unwrap_or_else(|| PathBuf::from("out")));
    match config.and_then(|c| run(&cli, &c)) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("{}", json!({ "command": command, "failures": n }));
            ExitCode::from(1)
        }
        Err(e) => {
            let record =
                json!({ "error": { "command": command, "kind": e.kind, "message": e.message } });
            output::write_error_record(&out_dir, &record);
            eprintln!("{record}");
            ExitCode::from(2)
        }
    }
}
