use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};
use sfgl_core::dataset::{
    format_edge_list, load_features, load_labels, make_split_with_validation, tfidf_transform, LabelTable, Split,
    SplitStrategy,
};
use sfgl_core::gcn::{load_checkpoint, normalize_adjacency, pseudo_label, pseudo_label_tsv, save_checkpoint};
use sfgl_core::knn::{build_knn_graph, degree_report, DirectedKnnGraph};
use sfgl_core::pipeline::{
    current_graph, graph_stats, import_embeddings, run_iteration, run_real_graph_comparison, run_self_contained,
    run_stage_a, run_stage_b, train_and_evaluate, EmbeddingMatrix, FinetuneExport, FinetuneRow, Mode, PipelineConfig,
    RunReport, CLASSIFIER_CHECKPOINT, FINETUNE_EXPORT, GRAPH_EDGES, GRAPH_SIDECAR, PREDICTIONS, PSEUDO_LABELS,
    REPORT_FILE, SPLIT_FILE,
};
use sfgl_core::scalefree::{
    compare_fits, fit_exponential, fit_power_law, generate_ba_graph, histogram_csv, log_binned_histogram,
    DegreeSample, FitRecord,
};
use sfgl_core::{Error, SparseFeatureMatrix};

use crate::{
    BaGenArgs, BuildGraphArgs, ClassifyArgs, Cmd, CompareRealArgs, ConfigArgs, DegreesArgs, ExportFinetuneArgs,
    Failure, FitArgs, FitModel, HyperArgs, ImportEmbeddingsArgs, NodeInputArgs, PseudoLabelArgs, RunArgs, SplitArgs,
    Stage, TrainArgs,
};

type CmdResult = Result<(), Failure>;

pub(crate) fn dispatch(cmd: Cmd) -> CmdResult {
    match cmd {
        Cmd::BuildGraph(a) => build_graph(a),
        Cmd::Degrees(a) => degrees(a),
        Cmd::Fit(a) => fit(a),
        Cmd::BaGen(a) => ba_gen(a),
        Cmd::Train(a) => train(a),
        Cmd::PseudoLabel(a) => pseudo_label_cmd(a),
        Cmd::ExportFinetune(a) => export_finetune(a),
        Cmd::ImportEmbeddings(a) => import_embeddings_cmd(a),
        Cmd::Classify(a) => classify(a),
        Cmd::Run(a) => run(a),
        Cmd::CompareReal(a) => compare_real(a),
    }
}

/// `{"error": kind, "message": ..., "stage"?: ..., "epoch"?: ...}` for stderr.
pub(crate) fn error_json(err: &anyhow::Error) -> String {
    let mut obj = json!({ "error": "runtime", "message": format!("{err:#}") });
    if let Some(core) = err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        let mut inner = core;
        while let Error::Stage { stage, source } = inner {
            obj["stage"] = json!(stage);
            inner = source;
        }
        obj["error"] = json!(error_kind(inner));
        if let Error::Training { epoch, .. } = inner {
            obj["epoch"] = json!(epoch);
        }
        if let Error::Numeric { layer, .. } = inner {
            obj["layer"] = json!(layer);
        }
    }
    obj.to_string()
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
        Error::Bounds(_) => "bounds",
        Error::Shape(_) => "shape",
        Error::Domain(_) => "domain",
        Error::Input(_) => "input",
        Error::Config(_) => "config",
        Error::Contract(_) => "contract",
        Error::Fit(_) => "fit",
        Error::Numeric { .. } => "numeric",
        Error::Training { .. } => "training",
        Error::Stage { .. } => "stage",
        Error::Json(_) => "json",
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Missing inputs are usage errors, reported before any work starts.
fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} file not found: {}", path.display())))
    }
}

fn require_graph_dir(dir: &Path) -> CmdResult {
    require_file(&dir.join(GRAPH_EDGES), "graph edge")?;
    require_file(&dir.join(GRAPH_SIDECAR), "graph sidecar")
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Writes `report.json`: the resolved arguments, the seed and the command's results.
fn write_report(out: &Path, command: &str, config: &impl Serialize, seed: Option<u64>, result: Value) -> CmdResult {
    let report = json!({ "command": command, "config": config, "seed": seed, "result": result });
    write_json(&out.join(REPORT_FILE), &report)?;
    println!("{command}: wrote {}", out.display());
    Ok(())
}

fn load_feature_file(path: &Path, format: crate::FormatArg, tfidf: bool) -> Result<SparseFeatureMatrix, Failure> {
    require_file(path, "feature")?;
    let mut f = load_features(path, format.into())?;
    if tfidf {
        f = tfidf_transform(&f)?;
    }
    Ok(f)
}

/// Shallow features or imported embeddings, whichever was given.
fn load_node_input(input: &NodeInputArgs) -> Result<(SparseFeatureMatrix, &'static str), Failure> {
    match (&input.features, &input.embeddings) {
        (Some(p), _) => Ok((load_feature_file(p, input.format, input.tfidf)?, "features")),
        (None, Some(p)) => {
            require_file(p, "embedding")?;
            Ok((import_embeddings(p, None)?.to_features(), "embeddings"))
        }
        (None, None) => Err(usage("one of --features or --embeddings is required")),
    }
}

fn load_graph(dir: &Path) -> Result<DirectedKnnGraph, Failure> {
    require_graph_dir(dir)?;
    Ok(DirectedKnnGraph::load(&dir.join(GRAPH_EDGES), &dir.join(GRAPH_SIDECAR))?)
}

fn load_label_file(path: &Path, n_nodes: usize) -> Result<LabelTable, Failure> {
    require_file(path, "label")?;
    Ok(load_labels(path, n_nodes, None)?)
}

fn resolve_split(args: &SplitArgs, labels: &LabelTable, seed: u64) -> Result<Split, Failure> {
    if let Some(p) = &args.split {
        require_file(p, "split")?;
        let split = Split::load(p)?;
        split.validate(labels.n_nodes())?;
        return Ok(split);
    }
    let budget = args.budget.ok_or_else(|| usage("one of --split or --budget is required"))? as usize;
    let strategy = match args.strategy.as_str() {
        "auto" => SplitStrategy::auto(budget, labels.n_classes()),
        s => s.parse().map_err(|e: Error| usage(e.to_string()))?,
    };
    make_split_with_validation(labels, budget, args.n_val, strategy, seed).map_err(|e| usage(e.to_string()))
}

fn hyper(h: &HyperArgs, seed: u64) -> Result<sfgl_core::gcn::GcnHyper, Failure> {
    let hyper = sfgl_core::gcn::GcnHyper {
        hidden: h.hidden,
        learning_rate: h.learning_rate,
        dropout: h.dropout,
        weight_decay: h.weight_decay,
        epochs: h.epochs,
        seed,
    };
    hyper.validate().map_err(|e| usage(e.to_string()))?;
    Ok(hyper)
}

fn build_graph(a: BuildGraphArgs) -> CmdResult {
    let f = load_feature_file(&a.input.features, a.input.format, a.input.tfidf)?;
    let g = build_knn_graph(&f, a.k as usize, a.metric.into())?;
    g.save(&a.out.join(GRAPH_EDGES), &a.out.join(GRAPH_SIDECAR))?;
    write_report(&a.out, "build-graph", &a, None, json!({ "graph": graph_stats(&g) }))
}

fn degrees(a: DegreesArgs) -> CmdResult {
    let g = load_graph(&a.graph)?;
    let r = degree_report(&g);
    write(&a.out.join("degrees.csv"), &r.to_csv())?;
    let lines: String = r.in_degree.iter().map(|d| format!("{d}\n")).collect();
    write(&a.out.join("in_degrees.txt"), &lines)?;
    let result = json!({
        "n_nodes": r.n_nodes(),
        "k": r.k,
        "n_undirected_edges": r.n_undirected_edges,
        "max_in_degree": r.max_in_degree(),
        "zero_in_degree": r.zero_in_degree_count(),
        "identity": r.identity(),
    });
    write_report(&a.out, "degrees", &a, None, result)
}

fn read_degree_file(path: &Path) -> Result<Vec<u64>, Failure> {
    require_file(path, "degree")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse::<u64>().map_err(|_| Failure::from(Error::Parse { line: i + 1, msg: format!("bad degree `{t}`") }))?);
    }
    Ok(out)
}

/// Fits the requested models and writes `fit.json`, `histogram.csv` and `fit_curve.csv`.
fn fit_sample(out: &Path, degrees: Vec<u64>, model: FitModel, theta_min: Option<u64>, bins: u32) -> Result<Value, Failure> {
    let sample = DegreeSample::new(degrees)?;
    write(&out.join("histogram.csv"), &histogram_csv(&log_binned_histogram(&sample, bins)?))?;
    let pl = match (model, theta_min) {
        (FitModel::Exponential, Some(_)) => None,
        _ => Some(fit_power_law(&sample, theta_min)?),
    };
    let ex = match model {
        FitModel::Powerlaw => None,
        _ => {
            let t = theta_min.or(pl.as_ref().map(|p| p.theta_min)).expect("cutoff known");
            Some(fit_exponential(&sample, t)?)
        }
    };
    let pl = if matches!(model, FitModel::Exponential) { None } else { pl };
    let cmp = match (&pl, &ex) {
        (Some(p), Some(e)) => Some(compare_fits(p, e)?),
        _ => None,
    };
    // empirical and fitted survival functions over the observed tail values
    let t0 = pl.as_ref().map(|p| p.theta_min).or(ex.as_ref().map(|e| e.theta_min)).unwrap_or(1);
    let tail: Vec<u64> = {
        let mut v: Vec<u64> = sample.degrees().iter().copied().filter(|&d| d >= t0 && d > 0).collect();
        v.sort_unstable();
        v
    };
    let mut curve = String::from("degree,empirical_ccdf,powerlaw_ccdf,exponential_ccdf\n");
    let n = tail.len() as f64;
    let mut i = 0;
    while i < tail.len() {
        let x = tail[i];
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let pl_s = pl.as_ref().map(|p| 1.0 - if x > p.theta_min { p.cdf(x - 1) } else { 0.0 });
        let ex_s = ex.as_ref().map(|e| 1.0 - if x > e.theta_min { e.cdf(x - 1) } else { 0.0 });
        curve.push_str(&format!("{x},{},{},{}\n", (n - i as f64) / n, cell(pl_s), cell(ex_s)));
        while i < tail.len() && tail[i] == x {
            i += 1;
        }
    }
    write(&out.join("fit_curve.csv"), &curve)?;
    let result = json!({
        "n": sample.len(),
        "n_zero": sample.n_zero(),
        "max": sample.max(),
        "power_law": pl.as_ref().map(FitRecord::from),
        "exponential": ex.as_ref().map(FitRecord::from),
        "comparison": cmp,
    });
    write_json(&out.join("fit.json"), &result)?;
    Ok(result)
}

fn fit(a: FitArgs) -> CmdResult {
    let degrees = match (&a.degrees, &a.graph) {
        (Some(p), _) => read_degree_file(p)?,
        (None, Some(dir)) => load_graph(dir)?.in_degrees(),
        (None, None) => return Err(usage("one of --degrees or --graph is required")),
    };
    let result = fit_sample(&a.out, degrees, a.model, a.theta_min, a.bins_per_decade)?;
    write_report(&a.out, "fit", &a, None, result)
}

fn ba_gen(a: BaGenArgs) -> CmdResult {
    if a.m == 0 || a.n <= a.m {
        return Err(usage(format!("ba-gen needs n > m >= 1, got n = {}, m = {}", a.n, a.m)));
    }
    let g = generate_ba_graph(a.n, a.m, a.seed)?;
    write(&a.out.join("ba.edges"), &format_edge_list(g.edges()))?;
    let fit = fit_sample(&a.out, g.degrees(), FitModel::Both, None, a.bins_per_decade)?;
    let result = json!({ "n_nodes": g.n_nodes(), "n_edges": g.n_edges(), "fit": fit });
    write_report(&a.out, "ba-gen", &a, Some(a.seed), result)
}

/// Shared by `train` and `classify`; they differ only in output file names.
#[allow(clippy::too_many_arguments)]
fn train_common(
    command: &str,
    config: &impl Serialize,
    input: &NodeInputArgs,
    graph_dir: &Path,
    labels_path: &Path,
    split_args: &SplitArgs,
    seed: u64,
    h: &HyperArgs,
    out: &Path,
    files: [&str; 2],
) -> CmdResult {
    let hyper = hyper(h, seed)?;
    let (f, source) = load_node_input(input)?;
    let g = load_graph(graph_dir)?;
    let labels = load_label_file(labels_path, f.n_rows())?;
    if g.n_nodes() != f.n_rows() {
        return Err(Error::Contract(format!("graph has {} nodes, {source} have {} rows", g.n_nodes(), f.n_rows())).into());
    }
    let split = resolve_split(split_args, &labels, seed)?;
    let adj = normalize_adjacency(&g.symmetrize());
    let model = train_and_evaluate(&f, &adj, &labels, &split, &hyper)?;
    save_checkpoint(&out.join(files[0]), &model.params)?;
    split.save(&out.join(SPLIT_FILE))?;
    write(&out.join(files[1]), &pseudo_label_tsv(&labels, &split, &model.predictions)?)?;
    let result = json!({ "feature_source": source, "hyper": hyper, "classifier": model.metrics });
    write_report(out, command, config, Some(seed), result)
}

fn train(a: TrainArgs) -> CmdResult {
    train_common(
        "train",
        &a,
        &a.input,
        &a.graph,
        &a.labels,
        &a.split,
        a.seed,
        &a.hyper,
        &a.out,
        ["checkpoint.txt", PSEUDO_LABELS],
    )
}

fn classify(a: ClassifyArgs) -> CmdResult {
    train_common(
        "classify",
        &a,
        &a.input,
        &a.graph,
        &a.labels,
        &a.split,
        a.seed,
        &a.hyper,
        &a.out,
        [CLASSIFIER_CHECKPOINT, PREDICTIONS],
    )
}

fn pseudo_label_cmd(a: PseudoLabelArgs) -> CmdResult {
    require_file(&a.checkpoint, "checkpoint")?;
    let params = load_checkpoint(&a.checkpoint)?;
    let (f, source) = load_node_input(&a.input)?;
    let g = load_graph(&a.graph)?;
    let labels = load_label_file(&a.labels, f.n_rows())?;
    require_file(&a.split, "split")?;
    let split = Split::load(&a.split)?;
    split.validate(labels.n_nodes())?;
    let adj = normalize_adjacency(&g.symmetrize());
    let pseudo = pseudo_label(&params, &f, &adj, &split)?;
    write(&a.out.join(PSEUDO_LABELS), &pseudo_label_tsv(&labels, &split, &pseudo)?)?;
    let result = json!({
        "feature_source": source,
        "n_pseudo": pseudo.len(),
        "pseudo_label_accuracy": pseudo.accuracy(&labels),
    });
    write_report(&a.out, "pseudo-label", &a, Some(params.hyper.seed), result)
}

/// Reads the `node_id label confidence is_pseudo` table written by `train`.
fn parse_pseudo_table(text: &str) -> Result<FinetuneExport, Error> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "node_id\tlabel\tconfidence\tis_pseudo" => {}
        _ => return Err(Error::Parse { line: 1, msg: "expected `node_id\tlabel\tconfidence\tis_pseudo` header".into() }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse { line: i + 1, msg: format!("bad {what}") };
        let t: Vec<&str> = line.split('\t').collect();
        if t.len() != 4 {
            return Err(bad("row: expected 4 tab-separated fields"));
        }
        rows.push(FinetuneRow {
            node: t[0].parse().map_err(|_| bad("node_id"))?,
            label: t[1].parse().map_err(|_| bad("label"))?,
            confidence: t[2].parse().map_err(|_| bad("confidence"))?,
            is_pseudo: match t[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("is_pseudo")),
            },
        });
    }
    Ok(FinetuneExport { rows })
}

fn export_finetune(a: ExportFinetuneArgs) -> CmdResult {
    require_file(&a.pseudo_labels, "pseudo-label")?;
    let text = fs::read_to_string(&a.pseudo_labels).with_context(|| format!("reading {}", a.pseudo_labels.display()))?;
    let export = parse_pseudo_table(&text)?;
    export.save(&a.out.join(FINETUNE_EXPORT))?;
    let result = json!({ "file": FINETUNE_EXPORT, "n_true": export.n_true(), "n_pseudo": export.n_pseudo() });
    write_report(&a.out, "export-finetune", &a, None, result)
}

fn import_embeddings_cmd(a: ImportEmbeddingsArgs) -> CmdResult {
    if let Some(fp) = &a.identity_from {
        let f = load_feature_file(fp, a.format, false)?;
        EmbeddingMatrix::from_features(&f)?.save(&a.embeddings)?;
    }
    require_file(&a.embeddings, "embedding")?;
    let emb = import_embeddings(&a.embeddings, a.n_nodes)?;
    let result = json!({ "n_nodes": emb.n_nodes(), "dim": emb.dim(), "identity": a.identity_from.is_some() });
    write_report(&a.out, "import-embeddings", &a, None, result)
}

fn pipeline_config(c: &ConfigArgs) -> Result<PipelineConfig, Failure> {
    require_file(&c.config, "config")?;
    let mut cfg = PipelineConfig::load(&c.config).map_err(|e| usage(e.to_string()))?;
    for kv in &c.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v, None).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(emb) = &c.embeddings {
        cfg.embeddings = Some(emb.clone());
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let e = &cfg.experiment;
    for (p, what) in [(&e.features, "feature"), (&e.labels, "label")] {
        match p {
            Some(p) => require_file(p, what)?,
            None => return Err(usage(format!("config is missing `{what}s`"))),
        }
    }
    Ok(cfg)
}

/// Embeddings for stages b and iterate: the imported file, or the features themselves
/// in self-contained mode.
fn stage_embeddings(cfg: &PipelineConfig) -> Result<EmbeddingMatrix, Failure> {
    match (&cfg.embeddings, cfg.mode) {
        (Some(p), _) => {
            require_file(p, "embedding")?;
            Ok(import_embeddings(p, None)?)
        }
        (None, Mode::SelfContained) => {
            let data = sfgl_core::pipeline::load_dataset(&cfg.experiment)?;
            Ok(EmbeddingMatrix::from_features(&data.features)?)
        }
        (None, Mode::ExportImport) => Err(Failure::Runtime(anyhow::Error::from(Error::Config(
            "embeddings required: pass --embeddings or set `embeddings` in export-import mode".into(),
        )))),
    }
}

fn summarize(cfg: &PipelineConfig, stage: &str, report: &RunReport) {
    let last = report.stages.last();
    let acc = last.and_then(|s| s.classifier.as_ref()).and_then(|c| c.test_accuracy);
    match acc {
        Some(acc) => println!("{stage}: test accuracy {acc:.4}; wrote {}", cfg.out_dir.display()),
        None => println!("{stage}: wrote {}", cfg.out_dir.display()),
    }
}

fn run(a: RunArgs) -> CmdResult {
    let cfg = pipeline_config(&a.config)?;
    let report = match a.stage {
        Stage::A => run_stage_a(&cfg)?.report,
        Stage::B => {
            let emb = stage_embeddings(&cfg)?;
            run_stage_b(&cfg, &emb, &current_graph(&cfg.out_dir)?)?
        }
        Stage::Iterate => {
            let emb = stage_embeddings(&cfg)?;
            run_iteration(&cfg, &emb)?.report
        }
        Stage::CompareReal => {
            let report = run_real_graph_comparison(&cfg, None)?;
            report.save(&cfg.out_dir.join(REPORT_FILE))?;
            report
        }
        Stage::Full => match cfg.mode {
            Mode::SelfContained => run_self_contained(&cfg)?,
            Mode::ExportImport => {
                let emb = stage_embeddings(&cfg)?;
                let a_out = run_stage_a(&cfg)?;
                let mut report = run_stage_b(&cfg, &emb, &a_out.graph)?;
                for _ in 0..cfg.experiment.iterations {
                    let it = run_iteration(&cfg, &emb)?;
                    report = run_stage_b(&cfg, &emb, &it.graph)?;
                }
                report
            }
        },
    };
    summarize(&cfg, &format!("run {:?}", a.stage).to_lowercase(), &report);
    Ok(())
}

fn compare_real(a: CompareRealArgs) -> CmdResult {
    let cfg = pipeline_config(&a.config)?;
    let edges: Option<PathBuf> = a.edges.clone().or_else(|| cfg.experiment.edges.clone());
    match &edges {
        Some(p) => require_file(p, "edge list")?,
        None => return Err(usage("compare-real needs --edges or `edges` in the config")),
    }
    let report = run_real_graph_comparison(&cfg, edges.as_deref())?;
    report.save(&cfg.out_dir.join(REPORT_FILE))?;
    if let Some(rows) = report.stage("compare-real").and_then(|s| s.comparison.as_ref()) {
        for r in rows {
            let acc = r.test_accuracy.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!("{}{}: {} edges, test accuracy {acc}", r.graph, r.k.map_or(String::new(), |k| format!(" k={k}")), r.n_undirected_edges);
        }
    }
    Ok(())
}
