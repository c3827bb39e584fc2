//! `intentloc`: synthetic data, training, inference, evaluation, pose
//! features, dataset statistics and gradient checks from one executable.
//!
//! Exit codes: 0 on success, 1 on any runtime failure, 2 on usage errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use intentloc::train::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "intentloc", version, about = "Weakly-supervised intent and failure localization")]
struct Cli {
    /// Worker threads for per-video work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic clustered-sequence dataset.
    Synth(SynthArgs),
    /// Train the dual-attention model on the train split of a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a predictions file on the test split.
    Eval(EvalArgs),
    /// Write per-video segment predictions for one split.
    Localize(LocalizeArgs),
    /// Turn a keypoint JSON file into pose features.
    Pose(PoseArgs),
    /// Dataset statistics and label-pair entropy of a manifest.
    Stats(StatsArgs),
    /// Finite-difference check of the loss gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for manifest.json and features/.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_videos: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Standard deviation of the per-clip noise.
    #[arg(long)]
    sigma: Option<f64>,
}

/// Overrides for keys of the JSON training config.
#[derive(Debug, Default, Args)]
struct TrainOverrides {
    /// JSON file with flat keys matching the training config; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda_weight: Option<f64>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    /// Top-k divisor of the MIL loss.
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    activation_threshold: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Use the `l/q` ordering margin.
    #[arg(long)]
    literal_eq5: bool,
}

impl TrainOverrides {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(path) => intentloc::io::read_json(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        apply!(
            seed,
            iterations,
            batch_size,
            learning_rate,
            lambda_weight,
            hidden_size,
            num_layers,
            s,
            p,
            q,
            activation_threshold,
            checkpoint_every
        );
        cfg.literal_eq5 |= self.literal_eq5;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for checkpoints, the training log and the resolved config.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["ckpt", "predictions"]))]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Evaluate an existing predictions file instead of running a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Directory for metrics.json, metrics.csv and predictions.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = intentloc::localize::DEFAULT_SEG_THRESHOLD)]
    seg_threshold: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory for predictions.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, default_value_t = intentloc::localize::DEFAULT_SEG_THRESHOLD)]
    seg_threshold: f64,
}

#[derive(Debug, Args)]
struct PoseArgs {
    /// Keypoint JSON of one video.
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// RGB feature file to fuse the pose chunks into.
    #[arg(long)]
    rgb: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 9, 17])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    goal_classes: usize,
    #[arg(long, default_value_t = 3)]
    unint_classes: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Loss settings are taken from the training config and its overrides.
    #[command(flatten)]
    overrides: TrainOverrides,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Localize(a) => commands::localize(a, threads),
        Command::Pose(a) => commands::pose(a),
        Command::Stats(a) => commands::stats(a),
        Command::Gradcheck(a) => commands::gradcheck(a, threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes whose text an outer
/// message already contains.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}
