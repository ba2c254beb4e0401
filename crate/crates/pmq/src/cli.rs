//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{self, Context, Globals};
use crate::config::{self, Task};
use crate::error::{CliError, Result};
use crate::gridfile::GridFile;
use crate::report::Table;

#[derive(Debug, Parser)]
#[command(name = "pmq", version, about = "Quantization grids for SDEs and option pricing on them")]
pub struct Cli {
    /// Monte Carlo seed, overriding `[mc] seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (accepted; computation is single-threaded and deterministic).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the grid sequence and write the grid files and per-step summary.
    Quantize {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Price the option list on a grid file or a freshly built grid.
    Price {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Grid file (binary or text export); overrides `grid_file`.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Price the option list on the grid and by Monte Carlo.
    CompareMc {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Calibrate a model to a quote file.
    Calibrate {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the task named by the config's `task` key.
    Run {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Convert a grid file between the binary and text formats.
    Export {
        /// Input grid file, binary or text.
        #[arg(long)]
        grid: PathBuf,
        /// Output path.
        #[arg(long)]
        to: PathBuf,
        /// Output format.
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Binary,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(table) => {
            if let Some(t) = table {
                print!("{}", t.pretty());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<Option<Table>> {
    let globals = Globals { seed: cli.seed, threads: cli.threads, out: cli.out };
    let (path, task, grid) = match cli.command {
        Command::Quantize { config } => (config, Some(Task::Quantize), None),
        Command::Price { config, grid } => (config, Some(Task::Price), grid),
        Command::CompareMc { config } => (config, Some(Task::CompareMc), None),
        Command::Calibrate { config } => (config, Some(Task::Calibrate), None),
        Command::Run { config } => (config, None, None),
        Command::Export { grid, to, format } => return export(&grid, &to, format).map(|_| None),
    };
    let loaded = config::load(&path)?;
    let task = match task.or(loaded.config.task) {
        Some(t) => t,
        None => return Err(CliError::Config(format!("{}: `run` needs a top-level `task` key", path.display()))),
    };
    let ctx = Context::new(loaded, globals, task)?;
    let table = match task {
        Task::Quantize => commands::quantize(&ctx)?,
        Task::Price => commands::price_book(&ctx, grid.as_deref())?,
        Task::CompareMc => commands::compare_mc(&ctx)?,
        Task::Calibrate => commands::calibrate_quotes(&ctx)?,
    };
    Ok(Some(table))
}

fn export(grid: &Path, to: &Path, format: Format) -> Result<()> {
    let file = GridFile::read(grid)?;
    match format {
        Format::Text => file.write_text(to),
        Format::Binary => file.write_binary(to),
    }
}
