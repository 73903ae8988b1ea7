//! Staged pseudo-labeling pipeline with a file boundary for external text encoders.
//!
//! Stage a builds the KNN graph on shallow features, trains the pseudo-labeler and
//! writes the finetune export. An external process turns that export into text
//! embeddings; stage b imports them and trains the final classifier on the stage-a
//! graph. Iteration rebuilds the graph on the latest embeddings and refreshes the
//! export. Every stage persists its artifacts under `out_dir` so stages can run in
//! separate processes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    load_edge_list, load_features, load_labels, make_split_with_validation, read_text, tfidf_transform,
    write_text, FeatureFormat, LabelTable, Split, SplitStrategy,
};
use crate::error::{Error, Result};
use crate::gcn::{
    evaluate_accuracy, normalize_adjacency, pseudo_label, pseudo_label_tsv, save_checkpoint, train_gcn,
    GcnHyper, GcnParams, NormalizedAdjacency, PseudoLabels,
};
use crate::graph::UndirectedGraph;
use crate::knn::{build_knn_graph, degree_report, DirectedKnnGraph, Metric};
use crate::scalefree::{compare_fits, fit_exponential, fit_power_law, DegreeSample, FitRecord, PreferredModel};
use crate::sparse::{DenseMatrix, SparseFeatureMatrix};

pub const GRAPH_EDGES: &str = "graph.edges";
pub const GRAPH_SIDECAR: &str = "graph.json";
pub const SPLIT_FILE: &str = "split.json";
pub const STATE_FILE: &str = "state.json";
pub const REPORT_FILE: &str = "report.json";
pub const FINETUNE_EXPORT: &str = "finetune_export.tsv";
pub const PSEUDO_LABELS: &str = "pseudo_labels.tsv";
pub const PSEUDO_CHECKPOINT: &str = "pseudolabeler.ckpt";
pub const CLASSIFIER_CHECKPOINT: &str = "classifier.ckpt";
pub const PREDICTIONS: &str = "predictions.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Stages run separately; stage b reads embeddings written by an external process.
    ExportImport,
    /// Embeddings are the shallow features themselves; all stages run in one call.
    SelfContained,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "export-import" => Ok(Self::ExportImport),
            "self-contained" => Ok(Self::SelfContained),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Settings that determine results. Echoed into every report and hashed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub features: Option<PathBuf>,
    pub feature_format: FeatureFormat,
    pub tfidf: bool,
    pub labels: Option<PathBuf>,
    pub n_classes: Option<usize>,
    pub edges: Option<PathBuf>,
    pub k: usize,
    pub metric: Metric,
    pub budget: Option<usize>,
    /// `None` picks balanced when the budget divides evenly across classes.
    pub split: Option<SplitStrategy>,
    pub n_val: usize,
    pub seed: u64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub iterations: usize,
    pub compare_k: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let h = GcnHyper::default();
        Self {
            features: None,
            feature_format: FeatureFormat::CooText,
            tfidf: false,
            labels: None,
            n_classes: None,
            edges: None,
            k: 25,
            metric: Metric::Cosine,
            budget: None,
            split: None,
            n_val: 0,
            seed: 0,
            hidden: h.hidden,
            learning_rate: h.learning_rate,
            dropout: h.dropout,
            weight_decay: h.weight_decay,
            epochs: h.epochs,
            iterations: 0,
            compare_k: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn hyper(&self) -> GcnHyper {
        GcnHyper {
            hidden: self.hidden,
            learning_rate: self.learning_rate,
            dropout: self.dropout,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON echo, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub experiment: ExperimentConfig,
    pub out_dir: PathBuf,
    pub mode: Mode,
    pub embeddings: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            out_dir: PathBuf::from("sfgl-out"),
            mode: Mode::ExportImport,
            embeddings: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key} = `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key} = `{value}`: expected true or false"))),
    }
}

impl PipelineConfig {
    /// Keys accepted by [`PipelineConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "features",
        "feature_format",
        "tfidf",
        "labels",
        "n_classes",
        "edges",
        "embeddings",
        "out_dir",
        "mode",
        "k",
        "metric",
        "budget",
        "split",
        "n_val",
        "seed",
        "hidden",
        "learning_rate",
        "dropout",
        "weight_decay",
        "epochs",
        "iterations",
        "compare_k",
    ];

    /// Sets one key. Relative paths are resolved against `base` when given.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let value = value.trim();
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let e = &mut self.experiment;
        match key {
            "features" => e.features = Some(path(value)),
            "feature_format" => e.feature_format = parse_value(key, value)?,
            "tfidf" => e.tfidf = parse_bool(key, value)?,
            "labels" => e.labels = Some(path(value)),
            "n_classes" => e.n_classes = Some(parse_value(key, value)?),
            "edges" => e.edges = Some(path(value)),
            "embeddings" => self.embeddings = Some(path(value)),
            "out_dir" => self.out_dir = path(value),
            "mode" => self.mode = parse_value(key, value)?,
            "k" => e.k = parse_value(key, value)?,
            "metric" => e.metric = parse_value(key, value)?,
            "budget" | "m" => e.budget = Some(parse_value(key, value)?),
            "split" => e.split = if value == "auto" { None } else { Some(parse_value(key, value)?) },
            "n_val" => e.n_val = parse_value(key, value)?,
            "seed" => e.seed = parse_value(key, value)?,
            "hidden" => e.hidden = parse_value(key, value)?,
            "learning_rate" | "lr" => e.learning_rate = parse_value(key, value)?,
            "dropout" => e.dropout = parse_value(key, value)?,
            "weight_decay" | "wd" => e.weight_decay = parse_value(key, value)?,
            "epochs" => e.epochs = parse_value(key, value)?,
            "iterations" => e.iterations = parse_value(key, value)?,
            "compare_k" => {
                e.compare_k = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, found `{line}`")))?;
            cfg.set(key.trim(), value, base)?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if e.compare_k.contains(&0) {
            return Err(Error::Config("compare_k values must be at least 1".into()));
        }
        if self.mode == Mode::SelfContained && self.embeddings.is_some() {
            return Err(Error::Config("self-contained mode derives embeddings from the features; drop `embeddings`".into()));
        }
        e.hyper().validate()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Shallow features plus labels, as configured.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: SparseFeatureMatrix,
    pub labels: LabelTable,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let fpath = cfg.features.as_deref().ok_or_else(|| Error::Config("`features` is required".into()))?;
    let lpath = cfg.labels.as_deref().ok_or_else(|| Error::Config("`labels` is required".into()))?;
    let mut features = load_features(fpath, cfg.feature_format)?;
    if cfg.tfidf {
        features = tfidf_transform(&features)?;
    }
    let labels = load_labels(lpath, features.n_rows(), cfg.n_classes)?;
    Ok(Dataset { features, labels })
}

pub fn make_pipeline_split(cfg: &ExperimentConfig, labels: &LabelTable) -> Result<Split> {
    let budget = cfg.budget.ok_or_else(|| Error::Config("`budget` is required".into()))?;
    let strategy = cfg.split.unwrap_or_else(|| SplitStrategy::auto(budget, labels.n_classes()));
    make_split_with_validation(labels, budget, cfg.n_val, strategy, cfg.seed)
}

/// Dense `n × d` text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: DenseMatrix,
}

const EMB_MAGIC: &str = "SFGL-EMB v1";

impl EmbeddingMatrix {
    pub fn new(data: DenseMatrix) -> Result<Self> {
        if data.cols() == 0 {
            return Err(Error::Contract("embeddings need at least one dimension".into()));
        }
        if !data.is_finite() {
            return Err(Error::Contract("embeddings contain non-finite values".into()));
        }
        Ok(Self { data })
    }

    /// Embeddings equal to the given features, as an identity encoder would produce.
    pub fn from_features(f: &SparseFeatureMatrix) -> Result<Self> {
        Self::new(f.to_dense())
    }

    pub fn n_nodes(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.data
    }

    /// Sparse view with zeros dropped, so graph and GCN code share one input type.
    pub fn to_features(&self) -> SparseFeatureMatrix {
        SparseFeatureMatrix::from_dense(self.data.rows(), self.data.cols(), self.data.data())
            .expect("embedding values are finite")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{EMB_MAGIC} {} {}\n", self.n_nodes(), self.dim());
        for r in 0..self.n_nodes() {
            let row: Vec<String> = self.data.row(r).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn parse(text: &str, expected_nodes: Option<usize>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty embedding file"))?;
        let dims = header
            .trim()
            .strip_prefix(EMB_MAGIC)
            .ok_or_else(|| Error::parse(1, format!("expected `{EMB_MAGIC} <n> <d>` header")))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| Error::parse(1, format!("bad dimension `{t}`: {e}"))))
            .collect::<Result<_>>()?;
        let [n, d] = dims[..] else {
            return Err(Error::parse(1, "header needs exactly <n> <d>"));
        };
        if let Some(expected) = expected_nodes {
            if n != expected {
                return Err(Error::Contract(format!("embeddings declare {n} rows, dataset has {expected} nodes")));
            }
        }
        let mut data = Vec::with_capacity(n * d);
        let mut rows = 0;
        for (i, line) in lines {
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| Error::parse(i + 1, format!("bad value `{tok}`: {e}")))?);
            }
            if data.len() - before != d {
                return Err(Error::Contract(format!(
                    "line {}: expected {d} values, found {}",
                    i + 1,
                    data.len() - before
                )));
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Contract(format!("embeddings declare {n} rows, found {rows}")));
        }
        Self::new(DenseMatrix::from_vec(n, d, data)?)
    }
}

pub fn import_embeddings(path: &Path, expected_nodes: Option<usize>) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::parse(&read_text(path)?, expected_nodes)
}

/// One row of the finetune export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRow {
    pub node: usize,
    pub label: u32,
    pub is_pseudo: bool,
    pub confidence: f64,
}

/// Training targets for an external encoder: true labels weighted `1/m`, pseudo-labels
/// weighted `1/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneExport {
    pub rows: Vec<FinetuneRow>,
}

impl FinetuneExport {
    pub fn build(labels: &LabelTable, split: &Split, pseudo: &PseudoLabels) -> Result<Self> {
        let mut rows: Vec<FinetuneRow> = Vec::with_capacity(pseudo.n_nodes);
        for &i in &split.labeled_idx {
            let label = labels
                .get(i)
                .ok_or_else(|| Error::Contract(format!("labeled node {i} has no known label")))?;
            rows.push(FinetuneRow { node: i, label, is_pseudo: false, confidence: 1.0 });
        }
        rows.extend(
            pseudo.entries.iter().map(|e| FinetuneRow { node: e.node, label: e.label, is_pseudo: true, confidence: e.confidence }),
        );
        rows.sort_by_key(|r| r.node);
        if rows.windows(2).any(|w| w[0].node == w[1].node) {
            return Err(Error::Contract("a node is both labeled and pseudo-labeled".into()));
        }
        Ok(Self { rows })
    }

    pub fn n_true(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_pseudo).count()
    }

    pub fn n_pseudo(&self) -> usize {
        self.rows.iter().filter(|r| r.is_pseudo).count()
    }

    pub fn to_text(&self) -> String {
        let (m, n) = (self.n_true(), self.n_pseudo());
        let w = |c: usize| if c == 0 { 0.0 } else { 1.0 / c as f64 };
        let mut out = format!("# SFGL-FT v1 m={m} n={n} w_true={:?} w_pseudo={:?}\n", w(m), w(n));
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.8e}", r.node, r.label, u8::from(r.is_pseudo), r.confidence);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty export"))?;
        let fields = header
            .strip_prefix("# SFGL-FT v1 ")
            .ok_or_else(|| Error::parse(1, "expected `# SFGL-FT v1` header"))?;
        let mut declared = (None, None);
        for kv in fields.split_whitespace() {
            match kv.split_once('=') {
                Some(("m", v)) => declared.0 = v.parse::<usize>().ok(),
                Some(("n", v)) => declared.1 = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let t: Vec<&str> = line.split('\t').collect();
            if t.len() != 4 {
                return Err(Error::parse(i + 1, "expected 4 tab-separated fields"));
            }
            let bad = |what: &str| Error::parse(i + 1, format!("bad {what}"));
            rows.push(FinetuneRow {
                node: t[0].parse().map_err(|_| bad("node_id"))?,
                label: t[1].parse().map_err(|_| bad("label"))?,
                is_pseudo: match t[2] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("is_pseudo")),
                },
                confidence: t[3].parse().map_err(|_| bad("confidence"))?,
            });
        }
        let export = Self { rows };
        if declared != (Some(export.n_true()), Some(export.n_pseudo())) {
            return Err(Error::Contract(format!(
                "header declares m={:?} n={:?}, rows give m={} n={}",
                declared.0,
                declared.1,
                export.n_true(),
                export.n_pseudo()
            )));
        }
        Ok(export)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub k: usize,
    pub metric: Metric,
    pub n_directed_edges: usize,
    pub n_undirected_edges: usize,
    pub max_in_degree: u64,
    pub zero_in_degree: usize,
    pub degree_identity_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InDegreeFit {
    pub power_law: Option<FitRecord>,
    pub exponential: Option<FitRecord>,
    pub preferred: Option<PreferredModel>,
    pub log_likelihood_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub epochs: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Accuracy of predictions on non-training nodes whose label is known.
    pub unlabeled_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub graph: String,
    pub k: Option<usize>,
    pub n_undirected_edges: usize,
    pub test_accuracy: Option<f64>,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iteration: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature_source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub graph: Option<GraphStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub in_degree_fit: Option<InDegreeFit>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classifier: Option<ClassifierMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub export: Option<ExportSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comparison: Option<Vec<ComparisonRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub file: String,
    pub n_true: usize,
    pub n_pseudo: usize,
}

/// Unix-second timestamps, kept apart from the deterministic body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub started: u64,
    pub finished: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub timestamps: Vec<StageTime>,
}

impl RunReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self { config: cfg.clone(), config_hash: cfg.hash(), seed: cfg.seed, stages: Vec::new(), timestamps: Vec::new() }
    }

    /// Pretty JSON without the timestamps, for reproducibility comparisons.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("timestamps");
        }
        Ok(serde_json::to_string_pretty(&value)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().rev().find(|s| s.stage == name)
    }

    fn push(&mut self, stage: StageReport, started: u64) {
        self.timestamps.push(StageTime { stage: stage.stage.clone(), started, finished: now() });
        self.stages.push(stage);
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn graph_stats(g: &DirectedKnnGraph) -> GraphStats {
    let r = degree_report(g);
    GraphStats {
        n_nodes: g.n_nodes(),
        k: g.k(),
        metric: g.metric(),
        n_directed_edges: g.n_directed_edges(),
        n_undirected_edges: r.n_undirected_edges,
        max_in_degree: r.max_in_degree(),
        zero_in_degree: r.zero_in_degree_count(),
        degree_identity_holds: r.identity().holds,
    }
}

/// Power-law (KS-selected cutoff) and exponential fits of the in-degree tail.
/// Degenerate samples are reported rather than treated as failures.
pub fn fit_in_degrees(in_degrees: &[u64]) -> InDegreeFit {
    let attempt = || -> Result<InDegreeFit> {
        let sample = DegreeSample::new(in_degrees.to_vec())?;
        let pl = fit_power_law(&sample, None)?;
        let ex = fit_exponential(&sample, pl.theta_min)?;
        let cmp = compare_fits(&pl, &ex)?;
        Ok(InDegreeFit {
            power_law: Some(FitRecord::from(&pl)),
            exponential: Some(FitRecord::from(&ex)),
            preferred: Some(cmp.preferred),
            log_likelihood_ratio: Some(cmp.log_likelihood_ratio),
            error: None,
        })
    };
    attempt().unwrap_or_else(|e| InDegreeFit {
        power_law: None,
        exponential: None,
        preferred: None,
        log_likelihood_ratio: None,
        error: Some(e.to_string()),
    })
}

/// A trained model together with its evaluation.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: GcnParams,
    pub metrics: ClassifierMetrics,
    pub predictions: PseudoLabels,
}

/// Trains a GCN on `(f, adj)` and scores it on the split.
pub fn train_and_evaluate(
    f: &SparseFeatureMatrix,
    adj: &NormalizedAdjacency,
    labels: &LabelTable,
    split: &Split,
    hyper: &GcnHyper,
) -> Result<TrainedModel> {
    let out = train_gcn(f, adj, labels, split, hyper)?;
    let test_accuracy = if split.test_idx.is_empty() {
        None
    } else {
        Some(evaluate_accuracy(&out.params, f, adj, labels, &split.test_idx)?)
    };
    let train_accuracy = evaluate_accuracy(&out.params, f, adj, labels, &split.labeled_idx)?;
    let predictions = pseudo_label(&out.params, f, adj, split)?;
    let metrics = ClassifierMetrics {
        epochs: out.history.len(),
        final_loss: out.history.last().map_or(f64::NAN, |r| r.loss),
        train_accuracy,
        test_accuracy,
        unlabeled_accuracy: predictions.accuracy(labels),
        best_epoch: out.best_epoch,
    };
    Ok(TrainedModel { params: out.params, metrics, predictions })
}

/// State persisted between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub config_hash: String,
    pub seed: u64,
    pub iteration: usize,
    pub feature_source: String,
    pub export_file: String,
    pub graph_edges: String,
    pub graph_sidecar: String,
    pub report: RunReport,
}

impl PipelineState {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(STATE_FILE);
        if !path.exists() {
            return Err(Error::Config(format!("no pipeline state at {}; run stage a first", path.display())));
        }
        Ok(serde_json::from_str(&read_text(&path)?)?)
    }

    fn save(&self, out_dir: &Path) -> Result<()> {
        write_text(&out_dir.join(STATE_FILE), &(serde_json::to_string_pretty(self)? + "\n"))
    }

    fn check(&self, cfg: &ExperimentConfig) -> Result<()> {
        if self.config_hash != cfg.hash() {
            return Err(Error::Config(
                "pipeline state was produced with a different configuration".into(),
            ));
        }
        Ok(())
    }
}

pub struct StageAOutput {
    pub graph: DirectedKnnGraph,
    pub pseudo_labels: PseudoLabels,
    pub export_path: PathBuf,
    pub report: RunReport,
}

fn pseudo_labeler_stage(
    cfg: &PipelineConfig,
    data_f: &SparseFeatureMatrix,
    labels: &LabelTable,
    split: &Split,
    graph: &DirectedKnnGraph,
    stage: &str,
    suffix: &str,
) -> Result<(StageReport, PseudoLabels, PathBuf)> {
    let e = &cfg.experiment;
    let adj = normalize_adjacency(&graph.symmetrize());
    let model = train_and_evaluate(data_f, &adj, labels, split, &e.hyper())?;
    save_checkpoint(&cfg.out(&format!("pseudolabeler{suffix}.ckpt")), &model.params)?;
    write_text(
        &cfg.out(&format!("pseudo_labels{suffix}.tsv")),
        &pseudo_label_tsv(labels, split, &model.predictions)?,
    )?;
    let export = FinetuneExport::build(labels, split, &model.predictions)?;
    let export_name = format!("finetune_export{suffix}.tsv");
    let export_path = cfg.out(&export_name);
    export.save(&export_path)?;
    let report = StageReport {
        stage: stage.into(),
        seed: e.seed,
        config_hash: e.hash(),
        iteration: None,
        feature_source: None,
        graph: Some(graph_stats(graph)),
        in_degree_fit: Some(fit_in_degrees(&graph.in_degrees())),
        classifier: Some(model.metrics),
        export: Some(ExportSummary { file: export_name, n_true: export.n_true(), n_pseudo: export.n_pseudo() }),
        comparison: None,
    };
    Ok((report, model.predictions, export_path))
}

/// Features → KNN graph → pseudo-labeler → finetune export.
pub fn run_stage_a(cfg: &PipelineConfig) -> Result<StageAOutput> {
    cfg.validate()?;
    let started = now();
    let e = &cfg.experiment;
    let data = load_dataset(e).map_err(|err| err.in_stage("a"))?;
    let split = make_pipeline_split(e, &data.labels).map_err(|err| err.in_stage("a"))?;
    split.save(&cfg.out(SPLIT_FILE))?;
    let graph = build_knn_graph(&data.features, e.k, e.metric).map_err(|err| err.in_stage("a"))?;
    graph.save(&cfg.out(GRAPH_EDGES), &cfg.out(GRAPH_SIDECAR))?;
    write_text(&cfg.out("degrees.csv"), &degree_report(&graph).to_csv())?;
    let (mut stage, pseudo_labels, export_path) =
        pseudo_labeler_stage(cfg, &data.features, &data.labels, &split, &graph, "a", "")
            .map_err(|err| err.in_stage("a"))?;
    stage.feature_source = Some("features".into());
    let mut report = RunReport::new(e);
    report.push(stage, started);
    report.save(&cfg.out(REPORT_FILE))?;
    PipelineState {
        config_hash: e.hash(),
        seed: e.seed,
        iteration: 0,
        feature_source: "features".into(),
        export_file: FINETUNE_EXPORT.into(),
        graph_edges: GRAPH_EDGES.into(),
        graph_sidecar: GRAPH_SIDECAR.into(),
        report: report.clone(),
    }
    .save(&cfg.out_dir)?;
    Ok(StageAOutput { graph, pseudo_labels, export_path, report })
}

/// Final classifier on imported embeddings over the stage-a graph (or the latest
/// iteration's graph).
pub fn run_stage_b(cfg: &PipelineConfig, emb: &EmbeddingMatrix, graph: &DirectedKnnGraph) -> Result<RunReport> {
    cfg.validate()?;
    let started = now();
    let e = &cfg.experiment;
    let mut state = PipelineState::load(&cfg.out_dir)?;
    state.check(e)?;
    let labels = load_dataset(e).map_err(|err| err.in_stage("b"))?.labels;
    if emb.n_nodes() != labels.n_nodes() || graph.n_nodes() != labels.n_nodes() {
        return Err(Error::Contract(format!(
            "embeddings have {} rows and the graph {} nodes; dataset has {}",
            emb.n_nodes(),
            graph.n_nodes(),
            labels.n_nodes()
        ))
        .in_stage("b"));
    }
    let split = Split::load(&cfg.out(SPLIT_FILE))?;
    let f = emb.to_features();
    let adj = normalize_adjacency(&graph.symmetrize());
    let model = train_and_evaluate(&f, &adj, &labels, &split, &e.hyper()).map_err(|err| err.in_stage("b"))?;
    save_checkpoint(&cfg.out(CLASSIFIER_CHECKPOINT), &model.params)?;
    write_text(&cfg.out(PREDICTIONS), &pseudo_label_tsv(&labels, &split, &model.predictions)?)?;
    let stage = StageReport {
        stage: "b".into(),
        seed: e.seed,
        config_hash: e.hash(),
        iteration: Some(state.iteration),
        feature_source: Some("embeddings".into()),
        graph: None,
        in_degree_fit: None,
        classifier: Some(model.metrics),
        export: None,
        comparison: None,
    };
    state.report.push(stage, started);
    state.report.save(&cfg.out(REPORT_FILE))?;
    state.save(&cfg.out_dir)?;
    Ok(state.report)
}

pub struct IterationOutput {
    pub graph: DirectedKnnGraph,
    pub pseudo_labels: PseudoLabels,
    pub export_path: PathBuf,
    pub report: RunReport,
}

/// Rebuilds the KNN graph on the latest embeddings (same `k` and metric), retrains the
/// pseudo-labeler on them and writes a refreshed finetune export.
pub fn run_iteration(cfg: &PipelineConfig, emb_prev: &EmbeddingMatrix) -> Result<IterationOutput> {
    cfg.validate()?;
    let started = now();
    let e = &cfg.experiment;
    let mut state = PipelineState::load(&cfg.out_dir)?;
    state.check(e)?;
    let labels = load_dataset(e).map_err(|err| err.in_stage("iterate"))?.labels;
    if emb_prev.n_nodes() != labels.n_nodes() {
        return Err(Error::Contract(format!(
            "embeddings have {} rows, dataset has {} nodes",
            emb_prev.n_nodes(),
            labels.n_nodes()
        ))
        .in_stage("iterate"));
    }
    let split = Split::load(&cfg.out(SPLIT_FILE))?;
    let iteration = state.iteration + 1;
    let suffix = format!(".iter{iteration}");
    let f = emb_prev.to_features();
    let graph = build_knn_graph(&f, e.k, e.metric).map_err(|err| err.in_stage("iterate"))?;
    let edges = format!("graph{suffix}.edges");
    let sidecar = format!("graph{suffix}.json");
    graph.save(&cfg.out(&edges), &cfg.out(&sidecar))?;
    let (mut stage, pseudo_labels, export_path) =
        pseudo_labeler_stage(cfg, &f, &labels, &split, &graph, "iterate", &suffix)
            .map_err(|err| err.in_stage("iterate"))?;
    stage.iteration = Some(iteration);
    stage.feature_source = Some("embeddings".into());
    state.report.push(stage, started);
    state.report.save(&cfg.out(REPORT_FILE))?;
    state.iteration = iteration;
    state.feature_source = "embeddings".into();
    state.export_file = format!("finetune_export{suffix}.tsv");
    state.graph_edges = edges;
    state.graph_sidecar = sidecar;
    state.save(&cfg.out_dir)?;
    Ok(IterationOutput { graph, pseudo_labels, export_path, report: state.report })
}

/// Loads the graph the next stage should use, as recorded in the pipeline state.
pub fn current_graph(out_dir: &Path) -> Result<DirectedKnnGraph> {
    let state = PipelineState::load(out_dir)?;
    DirectedKnnGraph::load(&out_dir.join(&state.graph_edges), &out_dir.join(&state.graph_sidecar))
}

/// Stage a, then stage b with the shallow features as embeddings, then the configured
/// number of iterations (each followed by stage b).
pub fn run_self_contained(cfg: &PipelineConfig) -> Result<RunReport> {
    let a = run_stage_a(cfg)?;
    let data = load_dataset(&cfg.experiment)?;
    let emb = EmbeddingMatrix::from_features(&data.features)?;
    let mut report = run_stage_b(cfg, &emb, &a.graph)?;
    for _ in 0..cfg.experiment.iterations {
        let it = run_iteration(cfg, &emb)?;
        report = run_stage_b(cfg, &emb, &it.graph)?;
    }
    Ok(report)
}

/// Trains identical GCNs on a supplied graph and on KNN graphs for each configured `k`.
pub fn run_real_graph_comparison(cfg: &PipelineConfig, edge_list: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let started = now();
    let e = &cfg.experiment;
    let path = edge_list
        .or(e.edges.as_deref())
        .ok_or_else(|| Error::Config("real-graph comparison needs an edge list (`edges`)".into()))?;
    let data = load_dataset(e).map_err(|err| err.in_stage("compare-real"))?;
    let split = make_pipeline_split(e, &data.labels).map_err(|err| err.in_stage("compare-real"))?;
    let n = data.features.n_rows();
    let real = UndirectedGraph::from_edges(n, load_edge_list(path, n)?)?;
    let mut graphs = vec![("real".to_string(), None, real)];
    let ks = if e.compare_k.is_empty() { vec![e.k] } else { e.compare_k.clone() };
    for k in ks {
        let g = build_knn_graph(&data.features, k, e.metric).map_err(|err| err.in_stage("compare-real"))?;
        graphs.push(("knn".to_string(), Some(g.k()), g.symmetrize()));
    }
    let mut rows = Vec::with_capacity(graphs.len());
    for (name, k, g) in graphs {
        let adj = normalize_adjacency(&g);
        let model = train_and_evaluate(&data.features, &adj, &data.labels, &split, &e.hyper())
            .map_err(|err| err.in_stage("compare-real"))?;
        rows.push(ComparisonRow {
            graph: name,
            k,
            n_undirected_edges: g.n_edges(),
            test_accuracy: model.metrics.test_accuracy,
            train_accuracy: model.metrics.train_accuracy,
        });
    }
    let mut report = RunReport::new(e);
    report.push(
        StageReport {
            stage: "compare-real".into(),
            seed: e.seed,
            config_hash: e.hash(),
            iteration: None,
            feature_source: Some("features".into()),
            graph: None,
            in_degree_fit: None,
            classifier: None,
            export: None,
            comparison: Some(rows),
        },
        started,
    );
    report.save(&cfg.out("compare_report.json"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{format_labels, save_features};

    fn toy_dir() -> (tempfile::TempDir, PipelineConfig) {
        let dir = tempfile::tempdir().unwrap();
        // two well separated groups of five nodes
        let mut dense = Vec::new();
        let mut classes = Vec::new();
        for i in 0..10 {
            let c = u32::from(i >= 5);
            classes.push(c);
            let jitter = 0.05 * (i % 5) as f64;
            if c == 0 {
                dense.extend_from_slice(&[1.0, jitter, 0.0, 0.0]);
            } else {
                dense.extend_from_slice(&[0.0, 0.0, 1.0, jitter]);
            }
        }
        let f = SparseFeatureMatrix::from_dense(10, 4, &dense).unwrap();
        save_features(&dir.path().join("f.coo"), &f, FeatureFormat::CooText).unwrap();
        write_text(&dir.path().join("labels.txt"), &format_labels(&LabelTable::from_classes(&classes))).unwrap();
        let text = "features = f.coo\nlabels = labels.txt\nk = 3\nbudget = 2\nepochs = 60\nlr = 0.01\nhidden = 16\n";
        let mut cfg = PipelineConfig::parse(text, Some(dir.path())).unwrap();
        cfg.out_dir = dir.path().join("out");
        (dir, cfg)
    }

    #[test]
    fn config_parsing_and_defaults() {
        let cfg = PipelineConfig::parse("# comment\nk = 5 # trailing\nmetric = euclidean\ncompare_k = 5, 10\n", None).unwrap();
        assert_eq!(cfg.experiment.k, 5);
        assert_eq!(cfg.experiment.metric, Metric::Euclidean);
        assert_eq!(cfg.experiment.compare_k, vec![5, 10]);
        assert_eq!(cfg.experiment.hidden, 128);
        assert_eq!(cfg.experiment.learning_rate, 0.001);
        assert!(matches!(PipelineConfig::parse("bogus = 1", None), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("k 5", None), Err(Error::Parse { line: 1, .. })));
        assert!(PipelineConfig::parse("k = 0", None).unwrap().validate().is_err());
    }

    #[test]
    fn hash_ignores_runtime_settings() {
        let a = PipelineConfig::parse("k = 5\nout_dir = x\nmode = self-contained", None).unwrap();
        let b = PipelineConfig::parse("k = 5\nout_dir = y", None).unwrap();
        let c = PipelineConfig::parse("k = 6", None).unwrap();
        assert_eq!(a.experiment.hash(), b.experiment.hash());
        assert_ne!(a.experiment.hash(), c.experiment.hash());
        assert_eq!(a.experiment.hash().len(), 64);
    }

    #[test]
    fn embedding_round_trip_and_contracts() {
        let e = EmbeddingMatrix::parse("SFGL-EMB v1 3 2\n1 2\n3.5 -4\n0 0.1\n", Some(3)).unwrap();
        assert_eq!((e.n_nodes(), e.dim()), (3, 2));
        assert_eq!(EmbeddingMatrix::parse(&e.to_text(), None).unwrap(), e);
        assert!(matches!(EmbeddingMatrix::parse(&e.to_text(), Some(4)), Err(Error::Contract(_))));
        assert!(matches!(EmbeddingMatrix::parse("SFGL-EMB v1 2 2\n1 2\n", None), Err(Error::Contract(_))));
        assert!(matches!(EmbeddingMatrix::parse("SFGL-EMB v1 1 2\n1 2 3\n", None), Err(Error::Contract(_))));
        assert!(EmbeddingMatrix::parse("EMB 1 1\n1\n", None).is_err());
    }

    #[test]
    fn finetune_export_format() {
        let labels = LabelTable::from_classes(&[0, 1, 1, 0]);
        let split = Split { labeled_idx: vec![1], val_idx: vec![], test_idx: vec![0, 2, 3], seed: 0 };
        let pseudo = PseudoLabels {
            n_nodes: 4,
            entries: [0, 2, 3]
                .iter()
                .map(|&node| crate::gcn::PseudoLabel { node, label: 1, confidence: 0.5 })
                .collect(),
        };
        let export = FinetuneExport::build(&labels, &split, &pseudo).unwrap();
        let text = export.to_text();
        assert!(text.starts_with("# SFGL-FT v1 m=1 n=3 w_true=1.0 w_pseudo=0.3333333333333333\n"));
        assert!(text.contains("\n1\t1\t0\t1.00000000e0\n"));
        let back = FinetuneExport::parse(&text).unwrap();
        assert_eq!(back, export);
        let tampered = text.replace("m=1", "m=2");
        assert!(matches!(FinetuneExport::parse(&tampered), Err(Error::Contract(_))));
    }

    #[test]
    fn toy_self_contained_is_perfect() {
        let (_dir, mut cfg) = toy_dir();
        cfg.mode = Mode::SelfContained;
        let report = run_self_contained(&cfg).unwrap();
        let a = report.stage("a").unwrap();
        assert_eq!(a.classifier.as_ref().unwrap().unlabeled_accuracy, Some(1.0));
        let export = FinetuneExport::load(&cfg.out(FINETUNE_EXPORT)).unwrap();
        assert_eq!(export.rows.len(), 10);
        assert_eq!((export.n_true(), export.n_pseudo()), (2, 8));
        assert_eq!(report.stage("b").unwrap().classifier.as_ref().unwrap().test_accuracy, Some(1.0));
    }

    #[test]
    fn stage_b_requires_stage_a() {
        let (_dir, cfg) = toy_dir();
        let emb = EmbeddingMatrix::new(DenseMatrix::zeros(10, 2)).unwrap();
        let g = DirectedKnnGraph::from_adjacency(1, Metric::Cosine, (0..10).map(|i| vec![(i + 1) % 10]).collect()).unwrap();
        assert!(matches!(run_stage_b(&cfg, &emb, &g), Err(Error::Config(_))));
    }

    #[test]
    fn iteration_on_unchanged_features_keeps_graph() {
        let (_dir, cfg) = toy_dir();
        let a = run_stage_a(&cfg).unwrap();
        let data = load_dataset(&cfg.experiment).unwrap();
        let it = run_iteration(&cfg, &EmbeddingMatrix::from_features(&data.features).unwrap()).unwrap();
        assert_eq!(it.graph, a.graph);
        assert_eq!(current_graph(&cfg.out_dir).unwrap(), a.graph);
        assert_eq!(it.report.stages.len(), 2);
        assert_eq!(it.report.stages[1].iteration, Some(1));
    }

    #[test]
    fn comparison_against_fed_back_knn_graph() {
        let (dir, mut cfg) = toy_dir();
        let data = load_dataset(&cfg.experiment).unwrap();
        let g = build_knn_graph(&data.features, 3, Metric::Cosine).unwrap();
        let edges = dir.path().join("real.edges");
        write_text(&edges, &crate::dataset::format_edge_list(g.edges())).unwrap();
        cfg.experiment.compare_k = vec![3];
        let report = run_real_graph_comparison(&cfg, Some(&edges)).unwrap();
        let rows = report.stages[0].comparison.as_ref().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].test_accuracy, rows[1].test_accuracy);
        assert_eq!(rows[0].n_undirected_edges, rows[1].n_undirected_edges);

        let empty = dir.path().join("empty.edges");
        write_text(&empty, "").unwrap();
        let report = run_real_graph_comparison(&cfg, Some(&empty)).unwrap();
        assert_eq!(report.stages[0].comparison.as_ref().unwrap()[0].n_undirected_edges, 0);
        assert!(matches!(run_real_graph_comparison(&cfg, None), Err(Error::Config(_))));
    }
}
