use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sfgl_core::dataset::FeatureFormat;
use sfgl_core::knn::Metric;

mod commands;

/// KNN text graphs, scale-free degree analysis and GCN pseudo-labeling.
///
/// Exit codes: 0 success, 1 runtime failure (error JSON on stderr), 2 usage error.
/// SFGL_THREADS caps worker threads (0 or unset = all cores).
#[derive(Debug, Parser)]
#[command(name = "sfgl", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build a directed KNN graph from a feature file.
    BuildGraph(BuildGraphArgs),
    /// Degree centralities of a saved KNN graph.
    Degrees(DegreesArgs),
    /// Fit power-law and/or exponential tails to a degree sample.
    Fit(FitArgs),
    /// Generate a preferential-attachment reference graph and fit its degrees.
    BaGen(BaGenArgs),
    /// Train a GCN pseudo-labeler on features (or embeddings) over a saved graph.
    Train(TrainArgs),
    /// Predict labels for unlabeled nodes with a saved checkpoint.
    PseudoLabel(PseudoLabelArgs),
    /// Convert a pseudo-label table into the finetune export.
    ExportFinetune(ExportFinetuneArgs),
    /// Validate an embedding file (optionally writing identity embeddings first).
    ImportEmbeddings(ImportEmbeddingsArgs),
    /// Train the final classifier on embeddings and predict unlabeled nodes.
    Classify(ClassifyArgs),
    /// Run pipeline stages from a config file.
    Run(RunArgs),
    /// Compare GCN accuracy on a supplied graph against KNN graphs.
    CompareReal(CompareRealArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FormatArg {
    Coo,
    Dense,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Coo => FeatureFormat::CooText,
            FormatArg::Dense => FeatureFormat::DenseText,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MetricArg {
    Cosine,
    Euclidean,
    Manhattan,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => Metric::Cosine,
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Manhattan => Metric::Manhattan,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct FeatureArgs {
    /// Feature matrix file.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value = "coo")]
    format: FormatArg,
    /// Apply smoothed TF-IDF weighting to raw counts.
    #[arg(long)]
    tfidf: bool,
}

#[derive(Debug, Args, Serialize)]
struct BuildGraphArgs {
    #[command(flatten)]
    input: FeatureArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, value_enum, default_value = "cosine")]
    metric: MetricArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct DegreesArgs {
    /// Directory holding graph.edges and graph.json.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FitModel {
    Powerlaw,
    Exponential,
    Both,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    /// Degree file, one non-negative integer per line.
    #[arg(long, conflicts_with = "graph", required_unless_present = "graph")]
    degrees: Option<PathBuf>,
    /// Graph directory; its in-degrees are fitted.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    model: FitModel,
    /// Tail cutoff; chosen by KS distance when absent.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    theta_min: Option<u64>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    bins_per_decade: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BaGenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    bins_per_decade: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct HyperArgs {
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long = "lr", default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long = "weight-decay", default_value_t = 0.0005)]
    weight_decay: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct NodeInputArgs {
    /// Shallow feature file.
    #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
    features: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "coo")]
    format: FormatArg,
    #[arg(long)]
    tfidf: bool,
    /// Embedding file (`SFGL-EMB v1` format) used instead of features.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SplitArgs {
    /// Existing split JSON; otherwise one is drawn from --budget.
    #[arg(long, conflicts_with = "budget", required_unless_present = "budget")]
    split: Option<PathBuf>,
    /// Number of labeled training nodes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    budget: Option<u64>,
    /// auto, uniform or balanced.
    #[arg(long, default_value = "auto")]
    strategy: String,
    /// Validation nodes for best-epoch selection.
    #[arg(long, default_value_t = 0)]
    n_val: usize,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    input: NodeInputArgs,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PseudoLabelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    input: NodeInputArgs,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ExportFinetuneArgs {
    /// Pseudo-label table written by `train` or `pseudo-label`.
    #[arg(long)]
    pseudo_labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ImportEmbeddingsArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Expected node count.
    #[arg(long)]
    n_nodes: Option<usize>,
    /// Write the given feature file as embeddings before validating.
    #[arg(long)]
    identity_from: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "coo")]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ClassifyArgs {
    #[command(flatten)]
    input: NodeInputArgs,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum Stage {
    A,
    B,
    Iterate,
    CompareReal,
    /// Stage a, stage b, then the configured iterations.
    Full,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding file for stages b and iterate (overrides `embeddings`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    stage: Stage,
}

#[derive(Debug, Args, Serialize)]
struct CompareRealArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Real edge list (`src dst` per line).
    #[arg(long)]
    edges: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<sfgl_core::Error> for Failure {
    fn from(e: sfgl_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn init_threads() -> Result<(), Failure> {
    let n = match std::env::var("SFGL_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Failure::Usage(format!("SFGL_THREADS must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| commands::dispatch(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("{}", commands::error_json(&err));
            ExitCode::from(1)
        }
    }
}
