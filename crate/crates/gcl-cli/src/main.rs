//! `gcl`: stimulus generation, training, closure scoring, experiment
//! orchestration, and plot emission, one subcommand each.

mod commands;
mod manifest;
mod plots;
mod train_doc;

use clap::{Parser, Subcommand, ValueEnum};
use gcl_core::stimulus::ExportFormat;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gcl", version, about = "Closure measurement pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum ImageFormat {
    /// 8-bit RGB PNG files.
    Png,
    /// Raw little-endian f32 HWC dumps, bit-exact.
    Raw,
}

impl From<ImageFormat> for ExportFormat {
    fn from(f: ImageFormat) -> ExportFormat {
        match f {
            ImageFormat::Png => ExportFormat::Png,
            ImageFormat::Raw => ExportFormat::RawF32,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the full stimulus set and its triple pairing.
    GenStimuli {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
        format: ImageFormat,
        /// Triple-pairing seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overwrite a directory that already holds a run.
        #[arg(long)]
        force: bool,
    },
    /// Train one network from a config file.
    Train {
        /// TOML or JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Score closure for a trained checkpoint over stimulus triples.
    Closure {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Triples CSV from gen-stimuli; rebuilt from --seed when absent.
        #[arg(long)]
        triples: Option<PathBuf>,
        /// Layers to embed (comma-separated); all layers when absent.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Bootstrap seed, and pairing seed when --triples is absent.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Bootstrap resamples per confidence interval.
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long)]
        force: bool,
    },
    /// Run a replicated experiment from a plan file.
    Experiment {
        /// TOML or JSON experiment plan.
        #[arg(long, visible_alias = "config")]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel training jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the plan's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Draw SVG closure charts from curves CSVs.
    Report {
        /// One SVG is written per input CSV.
        #[arg(long, value_delimiter = ',', required = true)]
        curves: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Chart title; defaults to each CSV's file stem.
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenStimuli { out, format, seed, force } => {
            commands::gen_stimuli(&out, format.into(), seed, force)
        }
        Command::Train { config, out, seed, force } => {
            commands::train(&config, &out, seed, force)
        }
        Command::Closure { checkpoint, triples, layers, out, seed, bootstrap, force } => {
            commands::closure(&checkpoint, triples.as_deref(), &layers, &out, seed, bootstrap, force)
        }
        Command::Experiment { plan, out, jobs, seed, force } => {
            commands::experiment(&plan, &out, jobs.max(1), seed, force)
        }
        Command::Report { curves, out, title, force } => {
            commands::report(&curves, &out, title.as_deref(), force)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
