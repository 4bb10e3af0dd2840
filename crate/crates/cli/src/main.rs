mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Preset, RunConfig};
use error::CliError;

/// Multi-scale tensor-network structure search.
#[derive(Debug, Parser)]
#[command(name = "rgtn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Existing directory that receives every output file.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for parallel trials.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    emit_defaults: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic tensor, its truth structure and a mask.
    Synth,
    /// Search for a network reproducing the input tensor.
    Search,
    /// Fill in the unobserved entries of a masked tensor.
    Complete,
    /// Score structure recovery over repeated synthetic trials.
    Reveal,
    /// Compression ratio of each method at the configured error bounds.
    Compare,
}

impl Command {
    fn default_preset(self) -> Preset {
        match self {
            Command::Reveal => Preset::Reveal,
            Command::Compare => Preset::Compression,
            Command::Complete => Preset::CompletionVideo,
            Command::Synth | Command::Search => Preset::Default,
        }
    }
}

fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.command.default_preset())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.search.seed = cfg.seed;
    if cli.emit_defaults {
        return Ok(vec![cfg.to_toml()]);
    }
    if !cli.out.is_dir() {
        return Err(CliError::Usage(format!("output directory {} does not exist", cli.out.display())));
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let out: &Path = &cli.out;
    match cli.command {
        Command::Synth => commands::synth(&cfg, out),
        Command::Search => commands::search(&cfg, out),
        Command::Complete => commands::complete(&cfg, out),
        Command::Reveal => commands::reveal(&cfg, out),
        Command::Compare => commands::compare(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(lines) => {
            // a closed pipe is not an error worth reporting
            let mut stdout = std::io::stdout().lock();
            for l in lines {
                if writeln!(stdout, "{l}").is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
