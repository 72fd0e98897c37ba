//! Command-line surface: dataset synthesis, training, scoring, evaluation
//! reports and scatter plots.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use amqf::cli;

#[derive(Parser)]
#[command(name = "amqf", version, about = "Full-reference IQA with adaptive quality factors in a dictionary space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic distortion dataset with pseudo-MOS labels.
    Synth {
        /// Output directory for images and manifest.csv.
        #[arg(long)]
        out: PathBuf,
        /// Number of procedural reference images.
        #[arg(long)]
        refs: usize,
        /// Distortion levels per kind (1..=levels).
        #[arg(long)]
        levels: u32,
        /// Comma-separated kinds (default: all five).
        #[arg(long)]
        kinds: Option<String>,
        /// Reference image side length in pixels.
        #[arg(long, default_value_t = 96)]
        size: usize,
        /// Generation seed (falls back to AMQF_SEED, then 0).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path overrides, e.g. --override train.epochs=50.
        #[arg(long = "override")]
        overrides: Vec<String>,
    },
    /// Score one reference/distorted pair with a checkpoint.
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        dist: PathBuf,
    },
    /// Evaluate a checkpoint over a manifest and write report files.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Include PSNR/SSIM baseline rows in the summary.
        #[arg(long)]
        baselines: bool,
        /// Raw MOS scale of the manifest.
        #[arg(long, default_value_t = 0.0)]
        mos_min: f64,
        #[arg(long, default_value_t = 1.0)]
        mos_max: f64,
        /// Invert a DMOS-style scale (lower = better).
        #[arg(long)]
        invert_mos: bool,
    },
    /// Render the scatter plot of an eval result.json.
    Plot {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> amqf::Result<()> {
    match Cli::parse().command {
        Command::Synth {
            out,
            refs,
            levels,
            kinds,
            size,
            seed,
        } => cli::cmd_synth(
            &out,
            refs,
            levels,
            kinds.as_deref(),
            size,
            cli::resolve_seed(seed),
        ),
        Command::Train { config, overrides } => cli::cmd_train(&config, &overrides),
        Command::Score {
            ckpt,
            reference,
            dist,
        } => cli::cmd_score(&ckpt, &reference, &dist),
        Command::Eval {
            ckpt,
            manifest,
            out,
            baselines,
            mos_min,
            mos_max,
            invert_mos,
        } => cli::cmd_eval(&ckpt, &manifest, &out, baselines, (mos_min, mos_max), invert_mos),
        Command::Plot { result, out } => cli::cmd_plot(&result, &out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
