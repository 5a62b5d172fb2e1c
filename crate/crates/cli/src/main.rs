//! `rmvl`: dataset synthesis, staged training, generation and evaluation.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for malformed command lines.
const EXIT_USAGE: u8 = 1;
/// Exit status for data, config and checkpoint failures.
const EXIT_DATA: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "rmvl", version, about = "Two-stage residual-motion image-to-video generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic stick-figure corpus.
    Datagen(DatagenArgs),
    /// Train the pose forecaster, the forecasting generator or the refiner.
    Train(TrainArgs),
    /// Generate a video from one frame and a pose history.
    Generate(GenerateArgs),
    /// Evaluate on the held-out split.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct DatagenArgs {
    /// Dataset config (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for frames, keypoints and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Lstm,
    Gm,
    Gr,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(value_enum)]
    stage: Stage,
    #[arg(long)]
    manifest: PathBuf,
    /// Training config (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (default: $RMVL_HOME, else ./rmvl-run).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frozen G_M checkpoint for `train gr` (default: <run>/gm/gm.ckpt).
    #[arg(long)]
    gm: Option<PathBuf>,
    /// Continue from the checkpoints already in the run directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    /// Run directory holding default checkpoints (default: $RMVL_HOME, else ./rmvl-run).
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    gm: Option<PathBuf>,
    #[arg(long)]
    gr: Option<PathBuf>,
    #[arg(long)]
    lstm: Option<PathBuf>,
    /// Skip refinement and keep the coarse clip.
    #[arg(long)]
    no_refine: bool,
    /// Use ground-truth keypoints instead of forecasting them.
    #[arg(long)]
    use_gt_maps: bool,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Anchor frame (PNG).
    #[arg(long)]
    input: PathBuf,
    /// Keypoint file whose first `observed` poses form the history; the
    /// last history pose belongs to the anchor frame. With
    /// --use-gt-maps the following poses provide the targets.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    /// Observed history length when no forecaster is used.
    #[arg(long, default_value_t = 10)]
    observed: usize,
    #[arg(long, default_value_t = rmvl_core::condition::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    ckpt: CheckpointArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    observed: usize,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    /// Seed of the ACD embedder.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    ckpt: CheckpointArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Datagen(a) => commands::datagen(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
