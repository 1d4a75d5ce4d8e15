//! `mwgan`: prepare data, train, sample, and evaluate photo ↔ caricature models.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mwgan::config::Variant;

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment config file (`key = value` lines); defaults to the toy preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed, or seeds code sampling for sampling commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint to load (train: resume from it).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Experiment variant override.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: mwgan::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Align and crop a raw corpus (or synthesise the toy corpus) into a cache directory.
    Prep {
        /// Tab-separated manifest: image, landmark file, identity, domain.
        #[arg(long, conflicts_with = "toy")]
        manifest: Option<PathBuf>,
        /// Write the procedural toy corpus described by the config instead.
        #[arg(long)]
        toy: bool,
    },
    /// Train (or resume) a model.
    Train {
        /// Stop after this many total steps instead of the configured count.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Sample a grid of caricatures per input photo: rows vary the style code,
    /// columns the landmark code.
    Generate {
        /// Directory of aligned photos (`*.png` with `.lm` sidecars).
        #[arg(long)]
        photos: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_styles: usize,
        #[arg(long, default_value_t = 3)]
        n_exaggerations: usize,
    },
    /// Caricature of a photo with the style and exaggeration of a guide caricature.
    Guide {
        #[arg(long)]
        photo: PathBuf,
        #[arg(long)]
        guide: PathBuf,
    },
    /// Translate a caricature back to a photo with sampled codes.
    Invert {
        #[arg(long)]
        caricature: PathBuf,
    },
    /// Fréchet distance between generated and real test caricatures.
    EvalFid {
        #[arg(long, default_value_t = 4)]
        samples_per_input: usize,
        /// Trained embedder weights; without it a seeded random embedder is used.
        #[arg(long)]
        embedder_weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        embedder_seed: u64,
        #[arg(long, default_value_t = 32)]
        embedder_dim: usize,
    },
    /// Diversity of outputs under varying style and landmark codes.
    Probe {
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Dense backward-warp field between two landmark sidecars.
    Flow {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dst: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
}

#[derive(Parser, Debug)]
#[command(name = "mwgan", version, about = "Photo to caricature translation with separate texture and geometry codes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
