//! `gfgn`: reproducible experiments with feature-gated graph networks.
//!
//! Exit codes: 0 ok, 1 check failed, 2 configuration error, 3 data error,
//! 4 numerical failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gfgn::data::RowNormalize;
use gfgn::train::TrainConfig;
use gfgn::{ErrorKind, Variant};

#[derive(Parser)]
#[command(name = "gfgn", version, about = "Feature-gated graph networks: training, analysis and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over every (split, repeat) pair.
    Train(TrainCmd),
    /// Grid search with model selection by mean validation accuracy.
    Sweep(SweepCmd),
    /// Accuracy under random edge insertion, per noise ratio and model.
    NoiseSweep(NoiseSweepCmd),
    /// Train once and export the smoothing scores of one layer.
    DumpScores(DumpScoresCmd),
    /// Eigenvalues and filter coefficients (1 - s·λ)^K of the graph Laplacian.
    Spectral(SpectralCmd),
    /// Finite-difference gradient check on a random tiny graph.
    Gradcheck(GradcheckCmd),
    /// Generate a synthetic dataset from a JSON spec.
    Synth(SynthCmd),
    /// Print the edge homophily of a dataset.
    Homophily(HomophilyCmd),
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// Dataset directory (edges.tsv, features.tsv, labels.tsv).
    #[arg(long)]
    dataset: PathBuf,
    /// Row-normalize features: auto is on unless the dataset is synthetic.
    #[arg(long, default_value = "auto")]
    row_normalize: RowNormalize,
}

#[derive(Args, Clone)]
struct Hyper {
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    /// Hidden units per head.
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
}

impl Hyper {
    fn config(&self, variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            lr: self.lr,
            dropout: self.dropout,
            lambda: self.lambda,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            patience: self.patience,
            heads: self.heads,
            units_per_head: self.hidden,
            seed: self.seed,
            splits: self.splits,
            repeats: self.repeats,
        }
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model: Variant,
    #[command(flatten)]
    hyper: Hyper,
    /// Results JSON (default: <dataset>_<model>.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model: Variant,
    #[command(flatten)]
    hyper: Hyper,
    #[arg(long, value_delimiter = ',', default_value = "0.005,0.05")]
    lr_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.8")]
    dropout_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    lambda_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5e-4,5e-5")]
    weight_decay_grid: Vec<f64>,
    /// Results JSON (default: <dataset>_<model>_sweep.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseSweepCmd {
    #[command(flatten)]
    data: DatasetArgs,
    /// Added edges as a fraction of the original edge count.
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "gcn,gfgn-graph,gfgn-neighbor,gfgn-pair")]
    models: Vec<Variant>,
    #[command(flatten)]
    hyper: Hyper,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DumpScoresCmd {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model: Variant,
    #[arg(long, default_value_t = 1)]
    layer: usize,
    #[command(flatten)]
    hyper: Hyper,
    /// Score CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectralCmd {
    #[command(flatten)]
    data: DatasetArgs,
    /// Larger graphs are reduced to a breadth-first induced subgraph.
    #[arg(long, default_value_t = 512)]
    max_nodes: usize,
    /// Smoothing scores as start:stop:step (inclusive).
    #[arg(long, default_value = "0.1:1.0:0.1")]
    s_grid: String,
    /// Number of stacked linear layers.
    #[arg(long, default_value_t = 2)]
    k: u32,
    /// Use the self-loop augmented Laplacian.
    #[arg(long)]
    self_loops: bool,
    /// Coefficient CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long)]
    model: Variant,
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale the first analytic gradient (negative control).
    #[arg(long, hide = true)]
    corrupt: Option<f64>,
}

#[derive(Args)]
struct SynthCmd {
    /// JSON generator spec.
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HomophilyCmd {
    #[command(flatten)]
    data: DatasetArgs,
}

/// Why a command did not succeed.
#[derive(Debug)]
enum Failure {
    Core(gfgn::Error),
    CheckFailed(String),
    Output(PathBuf, std::io::Error),
}

impl From<gfgn::Error> for Failure {
    fn from(e: gfgn::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::CheckFailed(_) => 1,
            Failure::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
            Failure::Output(..) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::CheckFailed(msg) => write!(f, "check failed: {msg}"),
            Failure::Output(path, e) => write!(f, "cannot write {}: {e}", path.display()),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("GFGN_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| gfgn::Error::Config(format!("GFGN_THREADS must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| gfgn::Error::Config(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(c) => commands::train(c),
        Command::Sweep(c) => commands::sweep(c),
        Command::NoiseSweep(c) => commands::noise_sweep(c),
        Command::DumpScores(c) => commands::dump_scores(c),
        Command::Spectral(c) => commands::spectral(c),
        Command::Gradcheck(c) => commands::gradcheck(c),
        Command::Synth(c) => commands::synth(c),
        Command::Homophily(c) => commands::homophily(c),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gfgn: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
