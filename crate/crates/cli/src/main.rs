//! `hye`: simulate, tile, train, sample and evaluate from one config file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{RunConfig, CONFIG_REFERENCE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hye",
    version,
    about = "Conditional SAR tile diffusion: simulate, tile, train, sample, eval",
    after_long_help = after_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML run configuration (see `hye --help` for every key).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the simulator, training and sampling seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render scenes, cut and clean tiles, write <out>/scenes and <out>/tiles with manifests.
    Simulate(Common),
    /// Re-tile scene rasters (default <out>/scenes) into <out>/tiles.
    Tile(Common),
    /// Train on a tile directory; writes checkpoints, <out>/model.hyck and <out>/loss.jsonl.
    Train(Common),
    /// Generate dB tiles and PNG previews into <out>/samples.
    Sample(Common),
    /// Compare generated and real tile directories; writes <out>/report.jsonl and <out>/pairs.jsonl.
    Eval(Common),
}

fn after_help() -> String {
    format!(
        "Exit codes: 0 success, 2 config error, 3 data error, 4 training error, 5 I/O error.\n\
         Log verbosity: HYE_LOG (error, warn, info, debug, trace; default info).\n\n\
         Configuration reference (every key at its default):\n\n{CONFIG_REFERENCE}"
    )
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, cmd): (&Common, fn(&RunConfig, &std::path::Path) -> Result<(), CliError>) = match &cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Tile(c) => (c, commands::tile),
        Command::Train(c) => (c, commands::train),
        Command::Sample(c) => (c, commands::sample),
        Command::Eval(c) => (c, commands::eval),
    };
    let cfg = RunConfig::load(&common.config)?.with_seed(common.seed);
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    cmd(&cfg, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("HYE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("hye: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
