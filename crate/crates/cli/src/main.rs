mod commands;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use reqnn::io::CloudFormat;
use reqnn::network::PRESETS;

/// Rotation-equivariant quaternion networks for point clouds.
///
/// Exit status: 0 on success, 1 when a certificate or experiment fails,
/// 2 on usage or input errors. RQNN_THREADS caps the worker thread count.
#[derive(Debug, Parser)]
#[command(name = "reqnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Micro,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Equivariant,
    Twin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Layers,
    Network,
    Invariance,
    Permutation,
    Gradients,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
struct Common {
    /// Seed for datasets, initialization, shuffling and certificate trials.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trials per certificate, or repetitions per benchmarked operation.
    #[arg(long)]
    trials: Option<usize>,
    /// Tolerance overriding the per-property defaults.
    #[arg(long)]
    tol: Option<f64>,
    /// Built-in network.
    #[arg(long, value_parser = PossibleValuesParser::new(PRESETS), conflicts_with = "spec")]
    preset: Option<String>,
    /// Network spec as a JSON file.
    #[arg(long, value_name = "JSON")]
    spec: Option<PathBuf>,
    /// Preset size.
    #[arg(long, value_enum, default_value_t = ScaleArg::Micro)]
    scale: ScaleArg,
    /// Directory for reports, logs, checkpoints and clouds.
    #[arg(long, default_value = "reqnn-out")]
    out: PathBuf,
    /// Emit the virtual centroid as the first sampled point in FPS stages.
    #[arg(long)]
    fps_emit_centroid: bool,
}

/// Dataset selection for training and evaluation.
#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Directory laid out as <dir>/{train,test}/<class>/<cloud files>;
    /// synthetic shapes are generated when omitted.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    train_size: usize,
    #[arg(long, default_value_t = 150)]
    test_size: usize,
    /// Rotated copies of each test cloud.
    #[arg(long, default_value_t = 10)]
    rotations: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run equivariance, invariance and gradient certificates; writes certify.json.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Train a network; writes train.jsonl, checkpoint.rqnn, spec.json and dataset.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::Equivariant)]
        variant: VariantArg,
    },
    /// Score a checkpoint on the upright and rotated test sets; writes eval.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Defaults to <out>/checkpoint.rqnn.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = VariantArg::Equivariant)]
        variant: VariantArg,
    },
    /// Rotate the autoencoder bottleneck and decode; writes clouds and reconstruct.json.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Rotation axis, repeatable and paired with --angle.
        #[arg(long, value_parser = parse::axis, allow_hyphen_values = true)]
        axis: Vec<[f64; 3]>,
        /// Rotation angle such as pi/3, 2pi/3, 45deg or 0.7.
        #[arg(long, value_parser = parse::angle, allow_hyphen_values = true)]
        angle: Vec<f64>,
        /// Trained autoencoder; one is trained on synthetic shapes when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Cloud to reconstruct; defaults to a synthetic shape.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Format of written clouds.
        #[arg(long, value_parser = cloud_format, default_value = "xyz")]
        format: CloudFormat,
    },
    /// Parameter and multiply-add counts against the real-valued twin.
    Complexity {
        #[command(flatten)]
        common: Common,
        /// Input size; defaults to the network's own.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Median wall time of layer, geometry and network operations.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1024)]
        points: usize,
    },
}

fn cloud_format(s: &str) -> Result<CloudFormat, String> {
    s.parse().map_err(|e: reqnn::Error| e.to_string())
}

/// Outcome of a subcommand that ran to completion.
pub enum Status {
    Success,
    PropertyFailure,
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("RQNN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("RQNN_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(cli.command) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::PropertyFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
