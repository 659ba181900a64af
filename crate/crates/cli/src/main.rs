//! `rfgest`: dataset synthesis, AoA, preprocessing, features, circuit
//! training, evaluation, fusion and cost tables from the command line.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "rfgest", version, about = "RFID gesture recognition with fused Einsum circuits")]
#[command(after_help = "Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a labelled capture dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Raw and smoothed MUSIC azimuth tracks for every capture.
    Aoa {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the MUSIC pseudo-spectrum of every window.
        #[arg(long)]
        spectra: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Filtered, resampled 35-sample frames.
    Preprocess {
        #[arg(long)]
        dataset: PathBuf,
        /// Smoothed tracks from `aoa`; estimated on the fly when absent.
        #[arg(long)]
        aoa: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// SPR, SA and WA feature bundles from frames.
    Features {
        /// frames.jsonl from `preprocess`.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Stratified split and EM training of the three circuits.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// frames.jsonl; degenerate frames listed there are left out of training.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-model posteriors and metrics on the held-out samples.
    Eval {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Late fusion of the per-model posteriors written by `eval`.
    Fuse {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Operation-count tables and efficiency scores.
    Cost {
        /// Also write text and delimited-values files here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare with the published values; exit 3 on any mismatch.
        #[arg(long = "paper-check")]
        check: bool,
    },
    /// Every stage on an existing dataset, with invariant checks.
    Pipeline {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(command: Command) -> error::Result<()> {
    match command {
        Command::Simulate { out, cfg } => commands::simulate(&out, &cfg.resolve()?),
        Command::Aoa { dataset, out, spectra, cfg } => commands::aoa(&dataset, &out, spectra, &mut cfg.resolve()?),
        Command::Preprocess { dataset, aoa, out, cfg } => {
            commands::preprocess(&dataset, aoa.as_deref(), &out, &mut cfg.resolve()?)
        }
        Command::Features { frames, out, cfg } => commands::features(&frames, &out, &cfg.resolve()?),
        Command::Train { features, frames, out, cfg } => {
            commands::train(&features, frames.as_deref(), &out, &cfg.resolve()?)
        }
        Command::Eval { models, features, out, cfg } => commands::eval(&models, &features, &out, &cfg.resolve()?),
        Command::Fuse { eval, out, cfg } => commands::fuse(&eval, &out, &cfg.resolve()?),
        Command::Cost { out, check } => commands::cost(out.as_deref(), check),
        Command::Pipeline { dataset, out, cfg } => commands::pipeline(&dataset, &out, &mut cfg.resolve()?),
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
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
