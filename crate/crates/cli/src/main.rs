//! `gcd`: synthesize data, train, generate, evaluate and plot group dances.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcd_core::error::Error;

/// Exit status for each failure class.
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_MODEL: u8 = 4;

#[derive(Parser)]
#[command(name = "gcd", version, about = "Music-driven group choreography with contrastive diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write paired synthetic music/group-dance files and a manifest.
    SynthData(SynthDataArgs),
    /// Train the denoiser and contrastive encoder on a synthetic dataset.
    Train(TrainArgs),
    /// Sample group dances from a trained checkpoint.
    Generate(GenerateArgs),
    /// Score generated dances against a reference set.
    Evaluate(EvaluateArgs),
    /// Emit kinetic-velocity and motion-change curves as CSV and SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
pub struct SynthDataArgs {
    /// Output directory [path]
    #[arg(long)]
    pub out: PathBuf,
    /// Number of music/dance pairs [count]
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// RNG seed [integer]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Length of each pair [seconds]
    #[arg(long, default_value_t = 5.0)]
    pub duration: f64,
    /// Frame rate [frames/second]
    #[arg(long, default_value_t = 30)]
    pub fps: u32,
    /// Fewest dancers per group [count]
    #[arg(long, default_value_t = 2)]
    pub min_dancers: usize,
    /// Most dancers per group [count]
    #[arg(long, default_value_t = 5)]
    pub max_dancers: usize,
    /// Slowest tempo [beats/minute]
    #[arg(long, default_value_t = 60.0)]
    pub min_bpm: f64,
    /// Fastest tempo [beats/minute]
    #[arg(long, default_value_t = 150.0)]
    pub max_bpm: f64,
    /// Lowest planted group consistency [0..1]
    #[arg(long, default_value_t = 0.7)]
    pub min_consistency: f64,
    /// Highest planted group consistency [0..1]
    #[arg(long, default_value_t = 1.0)]
    pub max_consistency: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest, or the directory holding manifest.json [path]
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for loss.csv and checkpoints [path]
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of `key = value` lines; defaults to $GCD_CONFIG [path]
    #[arg(long, env = "GCD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set window=30` [key=value, repeatable]
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Optimizer iterations [count]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// RNG seed [integer]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate [unitless]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Sequences per batch [count]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training crop length [frames]
    #[arg(long)]
    pub window: Option<usize>,
    /// Contrastive negatives per anchor [count]
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Save an intermediate checkpoint every this many iterations, 0 = never [count]
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from this checkpoint [path]
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Drop the geometric losses
    #[arg(long)]
    pub no_geo: bool,
    /// Drop the contrastive loss
    #[arg(long)]
    pub no_nce: bool,
    /// Build the model without group global attention
    #[arg(long)]
    pub no_group_attention: bool,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Trained checkpoint [path]
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Music feature file to dance to [path]
    #[arg(long, conflicts_with = "synthetic_bpm", required_unless_present = "synthetic_bpm")]
    pub music: Option<PathBuf>,
    /// Synthesize music at this tempo instead of reading a file [beats/minute]
    #[arg(long)]
    pub synthetic_bpm: Option<f64>,
    /// Output directory [path]
    #[arg(long)]
    pub out: PathBuf,
    /// Length to generate; longer than the window uses chunked generation.
    /// Defaults to the music length, or one window for synthetic music [seconds]
    #[arg(long)]
    pub duration: Option<f64>,
    /// Dancers in the group [count]
    #[arg(long, default_value_t = 3, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub dancers: usize,
    /// Consistency/diversity guidance weight: >0 consistent, <0 diverse [unitless]
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true, value_parser = finite)]
    pub gamma: f64,
    /// Reverse sampler [ddim|ddpm]
    #[arg(long, default_value = "ddim")]
    pub sampler: String,
    /// DDIM steps [count]
    #[arg(long, default_value_t = 50)]
    pub ddim_steps: usize,
    /// Independent samples to write [count]
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// RNG seed; sample i uses seed + i [integer]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generation window; defaults to the training crop length [frames]
    #[arg(long)]
    pub window: Option<usize>,
    /// Write compact binary containers instead of JSON
    #[arg(long)]
    pub binary: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Directory of generated motion containers [path]
    #[arg(long)]
    pub generated: PathBuf,
    /// Directory of reference motion containers [path]
    #[arg(long)]
    pub reference: PathBuf,
    /// Music feature file shared by all generated groups, or a directory
    /// with one file per group in name order; MMC is omitted without it [path]
    #[arg(long)]
    pub audio: Option<PathBuf>,
    /// Output directory for report.json, report.csv and motion_change.csv [path]
    #[arg(long)]
    pub out: PathBuf,
    /// Kinetic-feature window of the motion-change curve [frames]
    #[arg(long, default_value_t = 30)]
    pub change_window: usize,
}

#[derive(Args)]
pub struct PlotArgs {
    /// Motion container [path]
    #[arg(long)]
    pub motion: PathBuf,
    /// Music feature file for beat markers [path]
    #[arg(long)]
    pub audio: PathBuf,
    /// Output directory [path]
    #[arg(long)]
    pub out: PathBuf,
    /// Kinetic-feature window of the motion-change curve [frames]
    #[arg(long, default_value_t = 30)]
    pub change_window: usize,
}

fn finite(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} is not finite")),
        Err(e) => Err(e.to_string()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::IoFailure { .. } | Error::Format { .. } | Error::Json(_) => EXIT_IO,
        Error::InvalidArgument(_) | Error::UnknownStrategy { .. } => EXIT_USAGE,
        _ => EXIT_MODEL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Plot(a) => commands::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
